#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/model.hpp"
#include "r2u/numeric.hpp"

namespace r2u {

// Every scalar of the dual-loop trainer. alpha is the simulated unlearning
// (inner ascent) rate, eta the outer learning rate; the lambdas weight the
// retain, recovery and current-utility terms of the outer update.
struct MetaHyper {
  double alpha = 1e-5;
  double eta = 2e-4;
  double lambda1 = 2.0;
  double lambda2 = 0.0;
  double lambda3 = 4.0;
  std::size_t outer_steps = 0;  // N; 0 means "derived from epochs"
  std::size_t batch_forget = 32;
  std::size_t batch_retain = 32;
  std::size_t batch_recovery = 32;
  std::size_t batch_full = 32;
  std::uint64_t seed = 0;

  // Throws ParameterError naming the offending field.
  void validate() const;
};

enum class TrainerKind {
  Ready2Unlearn,
  Standard,
  Reweighted,
  Noisy,
  Clipped,
  Phased,
  Goldfish,
  EmbedNoise,
  DpClipNoise,
};

const char* to_string(TrainerKind kind);
// Accepts the names produced by to_string; throws ValidationError otherwise.
TrainerKind trainer_kind_from_string(const std::string& name);

// Kind-specific scalars. The defaults are the baseline settings; neutral()
// returns the values under which every baseline reduces to Standard.
struct TrainerSettings {
  double reweight_high = 0.5;       // Reweighted: loss weight of high-risk examples
  double noise_sigma = 0.3;         // Noisy: std of Gaussian input noise
  double clip_norm = 1.0;           // Clipped: cap on the high-risk sub-batch gradient
  double goldfish_p = 0.25;         // Goldfish: drop probability per high-risk target
  double embed_noise_alpha = 5.0;   // EmbedNoise: uniform noise scale a / sqrt(K d)
  double dp_clip_norm = 0.1;        // DpClipNoise: per-example clip norm
  double dp_noise_multiplier = 1.0; // DpClipNoise: noise std = multiplier * c / batch
  // SGD rate of the baseline trainers; unset means they share MetaHyper::eta.
  std::optional<double> learning_rate;

  static TrainerSettings neutral();
  void validate() const;
};

struct GradBundle {
  Vec64 g0;
  Vec64 g1;
  std::optional<Vec64> g2;
  Vec64 g3;
};

// One logged optimisation step. Loss/accuracy fields are measured at the
// pre-update parameters on the step's own minibatches; NaN marks a quantity
// the step had no examples for.
struct TrainLogRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  TrainerKind trainer = TrainerKind::Standard;
  double forget_loss = std::numeric_limits<double>::quiet_NaN();
  double retain_loss = std::numeric_limits<double>::quiet_NaN();
  double full_loss = std::numeric_limits<double>::quiet_NaN();
  double forget_acc = std::numeric_limits<double>::quiet_NaN();
  double retain_acc = std::numeric_limits<double>::quiet_NaN();
  std::size_t high_risk_examples = 0;  // high-risk examples in the update batch
  bool skipped = false;                // Goldfish masked every target
};

using TrainLog = std::vector<TrainLogRow>;

struct StepResult {
  ParamState params;
  TrainLogRow row;
};

// theta_hat = theta + alpha * grad(theta; xf), role Adapted.
ParamState inner_ascent_step(const ParamState& p, const Batch& xf, double alpha);

// g0, g1 (and g2 when xrc is given) evaluated at the adapted parameters.
// First-order: no derivative of the inner step is taken. g3 is left empty.
GradBundle meta_gradients(const ParamState& adapted, const Batch& xf, const Batch& xr,
                          const Batch* xrc);

// -g0 + l1 g1 + l2 g2 + l3 g3, with the g2 term omitted when absent.
Vec64 combine_meta_gradients(const GradBundle& g, const MetaHyper& h);

// The outer update on explicit minibatches: theta - eta * combined, where
// g3 is taken at theta itself.
StepResult ready2unlearn_update(const ParamState& p, const Batch& xf, const Batch& xr,
                                const Batch* xrc, const Batch& x, const MetaHyper& h);

// Samples x_f, x_r, x_rc (when the partition has a recovery set) and then
// x ~ D, in that order, and applies ready2unlearn_update.
StepResult ready2unlearn_step(const ParamState& p, const RiskPartition& part, const MetaHyper& h,
                              SeededRng& rng);

// Where a baseline step sits within the run; Phased needs it.
struct StepContext {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t total_epochs = 1;
};

// One SGD step theta - lr * g on an already-sampled batch (lr is
// s.learning_rate when set, h.eta otherwise), with g shaped by
// the baseline kind. RNG is consumed only by the kinds that randomise
// (Noisy, Goldfish, EmbedNoise, DpClipNoise) and only when their scalar is
// not neutral.
StepResult baseline_update(TrainerKind kind, const TrainerSettings& s, const ParamState& p,
                           const Batch& batch, const MetaHyper& h, SeededRng& rng);

// Samples the kind's batch (from D, or from D_r in the second half of a
// Phased run) and applies baseline_update.
StepResult baseline_step(TrainerKind kind, const TrainerSettings& s, const ParamState& p,
                         const RiskPartition& part, const MetaHyper& h, const StepContext& ctx,
                         SeededRng& rng);

// Per-epoch trainer assignment.
struct Schedule {
  std::vector<TrainerKind> per_epoch;

  static Schedule constant(TrainerKind kind, std::size_t epochs);
  // Standard for the first epochs - prepared_epochs epochs, Ready2Unlearn for
  // the rest. Throws ParameterError when prepared_epochs > epochs.
  static Schedule prepare_last(std::size_t epochs, std::size_t prepared_epochs);
};

struct TrainResult {
  ParamState params;
  TrainLog log;
};

// Draws theta_0 with init_params(spec, rng), then runs ceil(|D| / batch_full)
// steps per epoch of the scheduled trainer. Returns role Prepared.
TrainResult train(const ModelSpec& spec, const RiskPartition& part, const TrainerSettings& s,
                  const MetaHyper& h, const Schedule& schedule, SeededRng& rng);

// Same, starting from given parameters instead of a fresh draw.
TrainResult train_from(ParamState start, const RiskPartition& part, const TrainerSettings& s,
                       const MetaHyper& h, const Schedule& schedule, SeededRng& rng);

}  // namespace r2u
