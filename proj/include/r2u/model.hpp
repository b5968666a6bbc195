#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "r2u/numeric.hpp"

namespace r2u {

// Classifier: MLP with tanh hidden layers and a softmax output.
// CharLM: K token embeddings concatenated -> tanh hidden -> softmax over V.
// Quadratic: one parameter theta with loss 0.5 * (theta - x)^2; the
// hand-checkable testbed for every optimizer operation.
enum class ModelKind { Classifier, CharLM, Quadratic };

struct ModelSpec {
  ModelKind kind = ModelKind::Classifier;
  std::vector<std::size_t> widths;  // Classifier: input, hidden..., classes
  std::size_t vocab = 0;            // CharLM
  std::size_t context = 0;
  std::size_t embed_dim = 0;
  std::size_t hidden = 0;

  static ModelSpec classifier(std::vector<std::size_t> widths);
  static ModelSpec char_lm(std::size_t vocab, std::size_t context, std::size_t embed_dim,
                           std::size_t hidden);
  static ModelSpec quadratic();

  // Throws ParameterError when a width is zero or the shape is incomplete.
  void validate() const;

  // Width of the representation the first dense layer consumes: the raw
  // input for a classifier, the concatenated embeddings for a CharLM.
  std::size_t input_width() const;
  // Number of classes (classifier) or vocabulary size (CharLM); 0 for Quadratic.
  std::size_t output_width() const;

  bool operator==(const ModelSpec&) const = default;
};

const char* to_string(ModelKind kind);

struct TensorSlot {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;

  std::size_t size() const;
  bool operator==(const TensorSlot&) const = default;
};

// Contiguous, non-overlapping slots in a fixed order: for a classifier
// W0, b0, W1, b1, ... (W stored row-major as out x in); for a CharLM
// embed, W0, b0, W1, b1; for Quadratic a single "theta".
std::vector<TensorSlot> make_layout(const ModelSpec& spec);
std::size_t parameter_count(const std::vector<TensorSlot>& layout);

enum class ParamRole { Initial, Prepared, Adapted, Unlearned, PostRecovery };

const char* to_string(ParamRole role);

struct ParamState {
  Vec64 values;
  std::vector<TensorSlot> layout;
  ModelSpec spec;
  ParamRole role = ParamRole::Initial;

  const TensorSlot& slot(const std::string& name) const;
  std::span<const double> tensor(const std::string& name) const;

  // Same spec/layout, new values and role. Throws DimensionError when the
  // value count does not match.
  ParamState with_values(Vec64 new_values, ParamRole new_role) const;
};

// Parameters for spec with the given values (role Initial unless set).
ParamState make_params(const ModelSpec& spec, Vec64 values, ParamRole role = ParamRole::Initial);

// Glorot-uniform weights, zero biases, role Initial. Weight matrices are
// filled in layout order, row-major. Quadratic starts at theta = 0.
ParamState init_params(const ModelSpec& spec, SeededRng& rng);

enum class RiskTag { HighRisk, LowRisk, Recovery };

const char* to_string(RiskTag tag);

// One training example. Classifier and Quadratic use `input` and `target`
// (the label; unused by Quadratic); CharLM uses `context` and `target`.
struct Example {
  Vec64 input;
  std::vector<std::int32_t> context;
  std::int32_t target = 0;
  RiskTag tag = RiskTag::LowRisk;
};

using Batch = std::vector<Example>;

struct LossResult {
  double mean = 0.0;
  Vec64 per_example;
};

// Throws DimensionError when the example does not fit the spec.
void check_example(const ModelSpec& spec, const Example& ex);

// Loss of one example. `input_noise`, when non-empty, is added to the
// first-layer representation (raw input or concatenated embeddings).
double example_loss(const ParamState& params, const Example& ex,
                    std::span<const double> input_noise = {});

// Writes the exact gradient of example_loss into `out` (overwriting it) and
// returns the loss. `out` must have the parameter length.
double example_gradient(const ParamState& params, const Example& ex,
                        std::span<const double> input_noise, std::span<double> out);

// Mean loss over the batch plus the per-example losses.
LossResult forward_loss(const ParamState& params, const Batch& batch);

// Per-example modifiers for accumulate_gradient. An empty `weights` means
// all ones; an empty `noise` means no perturbation for that example.
// `clip_norms[i]`, when finite, caps the norm of example i's gradient
// before weighting (per-example clipping); +inf leaves it untouched.
struct ExampleTerms {
  std::span<const double> weights;
  std::span<const Vec64> noise;
  std::span<const double> clip_norms;
};

// sum_i weights[i] * grad_i accumulated in batch order into `sum` (which is
// overwritten). Examples with weight exactly 0 are skipped. Returns the
// per-example losses.
Vec64 accumulate_gradient(const ParamState& params, const Batch& batch, const ExampleTerms& terms,
                          std::span<double> sum);

// Gradient of the mean loss: accumulate_gradient with unit weights, then
// each coordinate divided by the batch size.
Vec64 grad(const ParamState& params, const Batch& batch);

// Gradient and per-example losses from one pass.
struct GradResult {
  Vec64 gradient;
  LossResult loss;
};
GradResult grad_with_loss(const ParamState& params, const Batch& batch);

// Loss and argmax prediction of one example from a single forward pass.
// `predicted` is -1 for the Quadratic model.
struct ExampleScore {
  double loss = 0.0;
  std::int32_t predicted = -1;
};
ExampleScore score_example(const ParamState& params, const Example& ex);

// Output scores before the softmax.
Vec64 logits(const ParamState& params, const Example& ex);

// Classifier: argmax of the logits, ties to the lowest index.
std::int32_t predict_label(const ParamState& params, const Example& ex);
std::vector<std::int32_t> predict(const ParamState& params, const Batch& batch);

// CharLM (or classifier): softmax distribution over outputs.
Vec64 predict_distribution(const ParamState& params, const Example& ex);

// Numerically stable softmax; sums to 1.
Vec64 softmax(std::span<const double> z);

struct TokenLoss {
  std::size_t position = 0;
  std::int32_t token = 0;
  double loss = 0.0;
};

// For each position p >= K: -log p(token_p | tokens p-K .. p-1).
// Throws InputError if the sequence has K or fewer tokens.
std::vector<TokenLoss> per_token_loss(const ParamState& params,
                                      std::span<const std::int32_t> tokens);

}  // namespace r2u
