#include "r2u/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "r2u/error.hpp"

namespace r2u {

namespace {

std::string shape_text(std::size_t a, std::size_t b) {
  return std::to_string(a) + " vs " + std::to_string(b);
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

// z = W x + b for W stored row-major (out x in).
void dense_forward(std::span<const double> w, std::span<const double> b,
                   std::span<const double> x, std::span<double> z) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < z.size(); ++o) {
    const double* row = w.data() + o * in;
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    z[o] = acc;
  }
}

// dW = dz x^T, db = dz (both overwritten); if dx is non-empty, dx = W^T dz.
void dense_backward(std::span<const double> w, std::span<const double> x,
                    std::span<const double> dz, std::span<double> dw, std::span<double> db,
                    std::span<double> dx) {
  const std::size_t in = x.size();
  for (std::size_t o = 0; o < dz.size(); ++o) {
    double* row = dw.data() + o * in;
    const double g = dz[o];
    for (std::size_t i = 0; i < in; ++i) row[i] = g * x[i];
    db[o] = g;
  }
  if (!dx.empty()) {
    std::fill(dx.begin(), dx.end(), 0.0);
    for (std::size_t o = 0; o < dz.size(); ++o) {
      const double* row = w.data() + o * in;
      const double g = dz[o];
      for (std::size_t i = 0; i < in; ++i) dx[i] += row[i] * g;
    }
  }
}

std::span<const double> view(const ParamState& p, const TensorSlot& s) {
  return std::span<const double>(p.values).subspan(s.offset, s.size());
}

std::span<double> view(std::span<double> out, const TensorSlot& s) {
  return out.subspan(s.offset, s.size());
}

// First-layer representation: raw input (classifier) or concatenated
// embeddings (CharLM), plus optional additive noise.
Vec64 first_layer_input(const ParamState& p, const Example& ex, std::span<const double> noise) {
  Vec64 x;
  if (p.spec.kind == ModelKind::CharLM) {
    const auto& spec = p.spec;
    const auto embed = view(p, p.layout[0]);
    x.resize(spec.context * spec.embed_dim);
    for (std::size_t k = 0; k < spec.context; ++k) {
      const auto tok = static_cast<std::size_t>(ex.context[k]);
      std::copy_n(embed.begin() + tok * spec.embed_dim, spec.embed_dim,
                  x.begin() + k * spec.embed_dim);
    }
  } else {
    x = ex.input;
  }
  if (!noise.empty()) {
    if (noise.size() != x.size()) {
      throw DimensionError("input noise width mismatch: " + shape_text(noise.size(), x.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += noise[i];
  }
  return x;
}

// Index of the first dense layer's weight slot in the layout.
std::size_t first_dense_slot(const ModelSpec& spec) {
  return spec.kind == ModelKind::CharLM ? 1 : 0;
}

std::size_t dense_layer_count(const ParamState& p) {
  return (p.layout.size() - first_dense_slot(p.spec)) / 2;
}

// Forward through the dense stack. acts[l] is the input of layer l; the
// returned vector holds the output logits.
Vec64 dense_stack_forward(const ParamState& p, Vec64 x, std::vector<Vec64>& acts) {
  const std::size_t first = first_dense_slot(p.spec);
  const std::size_t layers = dense_layer_count(p);
  acts.clear();
  acts.push_back(std::move(x));
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& ws = p.layout[first + 2 * l];
    const auto& bs = p.layout[first + 2 * l + 1];
    Vec64 z(ws.shape[0]);
    dense_forward(view(p, ws), view(p, bs), acts.back(), z);
    if (l + 1 == layers) return z;
    for (double& v : z) v = std::tanh(v);
    acts.push_back(std::move(z));
  }
  return {};
}

double quadratic_loss(const ParamState& p, const Example& ex) {
  const double d = p.values[0] - ex.input[0];
  return 0.5 * d * d;
}

}  // namespace

ModelSpec ModelSpec::classifier(std::vector<std::size_t> widths) {
  ModelSpec s;
  s.kind = ModelKind::Classifier;
  s.widths = std::move(widths);
  return s;
}

ModelSpec ModelSpec::char_lm(std::size_t vocab, std::size_t context, std::size_t embed_dim,
                             std::size_t hidden) {
  ModelSpec s;
  s.kind = ModelKind::CharLM;
  s.vocab = vocab;
  s.context = context;
  s.embed_dim = embed_dim;
  s.hidden = hidden;
  return s;
}

ModelSpec ModelSpec::quadratic() {
  ModelSpec s;
  s.kind = ModelKind::Quadratic;
  return s;
}

void ModelSpec::validate() const {
  switch (kind) {
    case ModelKind::Classifier:
      if (widths.size() < 2) throw ParameterError("classifier needs at least input and output widths");
      for (auto w : widths) {
        if (w == 0) throw ParameterError("classifier widths must be >= 1");
      }
      return;
    case ModelKind::CharLM:
      if (vocab == 0 || context == 0 || embed_dim == 0 || hidden == 0) {
        throw ParameterError("CharLM vocab, context, embed_dim and hidden must be >= 1");
      }
      return;
    case ModelKind::Quadratic:
      return;
  }
}

std::size_t ModelSpec::input_width() const {
  switch (kind) {
    case ModelKind::Classifier:
      return widths.front();
    case ModelKind::CharLM:
      return context * embed_dim;
    case ModelKind::Quadratic:
      return 1;
  }
  return 0;
}

std::size_t ModelSpec::output_width() const {
  switch (kind) {
    case ModelKind::Classifier:
      return widths.back();
    case ModelKind::CharLM:
      return vocab;
    case ModelKind::Quadratic:
      return 0;
  }
  return 0;
}

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Classifier:
      return "classifier";
    case ModelKind::CharLM:
      return "char_lm";
    case ModelKind::Quadratic:
      return "quadratic";
  }
  return "?";
}

const char* to_string(ParamRole role) {
  switch (role) {
    case ParamRole::Initial:
      return "initial";
    case ParamRole::Prepared:
      return "prepared";
    case ParamRole::Adapted:
      return "adapted";
    case ParamRole::Unlearned:
      return "unlearned";
    case ParamRole::PostRecovery:
      return "post_recovery";
  }
  return "?";
}

const char* to_string(RiskTag tag) {
  switch (tag) {
    case RiskTag::HighRisk:
      return "high_risk";
    case RiskTag::LowRisk:
      return "low_risk";
    case RiskTag::Recovery:
      return "recovery";
  }
  return "?";
}

std::size_t TensorSlot::size() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::vector<TensorSlot> make_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<TensorSlot> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    TensorSlot s{std::move(name), std::move(shape), offset};
    offset += s.size();
    layout.push_back(std::move(s));
  };
  switch (spec.kind) {
    case ModelKind::Classifier:
      for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        add("W" + std::to_string(l), {spec.widths[l + 1], spec.widths[l]});
        add("b" + std::to_string(l), {spec.widths[l + 1]});
      }
      break;
    case ModelKind::CharLM:
      add("embed", {spec.vocab, spec.embed_dim});
      add("W0", {spec.hidden, spec.context * spec.embed_dim});
      add("b0", {spec.hidden});
      add("W1", {spec.vocab, spec.hidden});
      add("b1", {spec.vocab});
      break;
    case ModelKind::Quadratic:
      add("theta", {1});
      break;
  }
  return layout;
}

std::size_t parameter_count(const std::vector<TensorSlot>& layout) {
  return layout.empty() ? 0 : layout.back().offset + layout.back().size();
}

const TensorSlot& ParamState::slot(const std::string& name) const {
  for (const auto& s : layout) {
    if (s.name == name) return s;
  }
  throw InputError("no parameter tensor named '" + name + "'");
}

std::span<const double> ParamState::tensor(const std::string& name) const {
  return view(*this, slot(name));
}

ParamState ParamState::with_values(Vec64 new_values, ParamRole new_role) const {
  if (new_values.size() != values.size()) {
    throw DimensionError("parameter vector length mismatch: " +
                         shape_text(new_values.size(), values.size()));
  }
  return ParamState{std::move(new_values), layout, spec, new_role};
}

ParamState make_params(const ModelSpec& spec, Vec64 values, ParamRole role) {
  auto layout = make_layout(spec);
  if (values.size() != parameter_count(layout)) {
    throw DimensionError("parameter vector length mismatch: " +
                         shape_text(values.size(), parameter_count(layout)));
  }
  return ParamState{std::move(values), std::move(layout), spec, role};
}

ParamState init_params(const ModelSpec& spec, SeededRng& rng) {
  auto layout = make_layout(spec);
  Vec64 values(parameter_count(layout), 0.0);
  if (spec.kind != ModelKind::Quadratic) {
    for (const auto& s : layout) {
      if (s.shape.size() != 2) continue;  // biases stay zero
      // Embedding table is V x d; dense weights are out x in.
      const double fan_sum = static_cast<double>(s.shape[0] + s.shape[1]);
      const double bound = std::sqrt(6.0 / fan_sum);
      const Vec64 w = uniform(rng, s.size(), -bound, bound);
      std::copy(w.begin(), w.end(), values.begin() + static_cast<std::ptrdiff_t>(s.offset));
    }
  }
  return ParamState{std::move(values), std::move(layout), spec, ParamRole::Initial};
}

void check_example(const ModelSpec& spec, const Example& ex) {
  switch (spec.kind) {
    case ModelKind::Classifier:
      if (ex.input.size() != spec.widths.front()) {
        throw DimensionError("classifier input width mismatch: " +
                             shape_text(ex.input.size(), spec.widths.front()));
      }
      if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= spec.widths.back()) {
        throw DimensionError("label " + std::to_string(ex.target) + " out of range for " +
                             std::to_string(spec.widths.back()) + " classes");
      }
      return;
    case ModelKind::CharLM:
      if (ex.context.size() != spec.context) {
        throw DimensionError("context length mismatch: " +
                             shape_text(ex.context.size(), spec.context));
      }
      for (auto t : ex.context) {
        if (t < 0 || static_cast<std::size_t>(t) >= spec.vocab) {
          throw DimensionError("token id " + std::to_string(t) + " out of vocabulary");
        }
      }
      if (ex.target < 0 || static_cast<std::size_t>(ex.target) >= spec.vocab) {
        throw DimensionError("target token " + std::to_string(ex.target) + " out of vocabulary");
      }
      return;
    case ModelKind::Quadratic:
      if (ex.input.size() != 1) throw DimensionError("quadratic model takes scalar inputs");
      return;
  }
}

ExampleScore score_example(const ParamState& params, const Example& ex) {
  check_example(params.spec, ex);
  if (params.spec.kind == ModelKind::Quadratic) return {quadratic_loss(params, ex), -1};
  std::vector<Vec64> acts;
  const Vec64 z = dense_stack_forward(params, first_layer_input(params, ex, {}), acts);
  const auto best = std::max_element(z.begin(), z.end()) - z.begin();
  return {log_sum_exp(z) - z[static_cast<std::size_t>(ex.target)], static_cast<std::int32_t>(best)};
}

Vec64 logits(const ParamState& params, const Example& ex) {
  check_example(params.spec, ex);
  if (params.spec.kind == ModelKind::Quadratic) {
    throw InputError("quadratic model has no logits");
  }
  std::vector<Vec64> acts;
  return dense_stack_forward(params, first_layer_input(params, ex, {}), acts);
}

double example_loss(const ParamState& params, const Example& ex,
                    std::span<const double> input_noise) {
  check_example(params.spec, ex);
  if (params.spec.kind == ModelKind::Quadratic) return quadratic_loss(params, ex);
  std::vector<Vec64> acts;
  const Vec64 z = dense_stack_forward(params, first_layer_input(params, ex, input_noise), acts);
  return log_sum_exp(z) - z[static_cast<std::size_t>(ex.target)];
}

double example_gradient(const ParamState& params, const Example& ex,
                        std::span<const double> input_noise, std::span<double> out) {
  check_example(params.spec, ex);
  if (out.size() != params.values.size()) {
    throw DimensionError("gradient buffer length mismatch: " +
                         shape_text(out.size(), params.values.size()));
  }
  if (params.spec.kind == ModelKind::Quadratic) {
    out[0] = params.values[0] - ex.input[0];
    return quadratic_loss(params, ex);
  }

  std::vector<Vec64> acts;
  const Vec64 z = dense_stack_forward(params, first_layer_input(params, ex, input_noise), acts);
  const double lse = log_sum_exp(z);
  const double loss = lse - z[static_cast<std::size_t>(ex.target)];

  // d loss / d z = softmax(z) - onehot(target)
  Vec64 dz(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) dz[i] = std::exp(z[i] - lse);
  dz[static_cast<std::size_t>(ex.target)] -= 1.0;

  const std::size_t first = first_dense_slot(params.spec);
  const bool need_input_grad = params.spec.kind == ModelKind::CharLM;
  Vec64 dx;
  for (std::size_t l = dense_layer_count(params); l-- > 0;) {
    const auto& ws = params.layout[first + 2 * l];
    const auto& bs = params.layout[first + 2 * l + 1];
    const auto& x = acts[l];
    const bool propagate = l > 0 || need_input_grad;
    dx.assign(propagate ? x.size() : 0, 0.0);
    dense_backward(view(params, ws), x, dz, view(out, ws), view(out, bs), dx);
    if (l > 0) {
      // x = tanh(a) for hidden layers
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - x[i] * x[i];
      dz.swap(dx);
    }
  }

  if (params.spec.kind == ModelKind::CharLM) {
    const auto& es = params.layout[0];
    auto dembed = view(out, es);
    std::fill(dembed.begin(), dembed.end(), 0.0);
    const std::size_t d = params.spec.embed_dim;
    for (std::size_t k = 0; k < params.spec.context; ++k) {
      const auto tok = static_cast<std::size_t>(ex.context[k]);
      for (std::size_t j = 0; j < d; ++j) dembed[tok * d + j] += dx[k * d + j];
    }
  }
  return loss;
}

LossResult forward_loss(const ParamState& params, const Batch& batch) {
  if (batch.empty()) throw InputError("forward_loss: empty batch");
  LossResult r;
  r.per_example.reserve(batch.size());
  double sum = 0.0;
  for (const auto& ex : batch) {
    const double l = example_loss(params, ex);
    r.per_example.push_back(l);
    sum += l;
  }
  r.mean = sum / static_cast<double>(batch.size());
  return r;
}

Vec64 accumulate_gradient(const ParamState& params, const Batch& batch, const ExampleTerms& terms,
                          std::span<double> sum) {
  if (!terms.weights.empty() && terms.weights.size() != batch.size()) {
    throw DimensionError("weights length mismatch: " + shape_text(terms.weights.size(), batch.size()));
  }
  if (!terms.noise.empty() && terms.noise.size() != batch.size()) {
    throw DimensionError("noise length mismatch: " + shape_text(terms.noise.size(), batch.size()));
  }
  if (!terms.clip_norms.empty() && terms.clip_norms.size() != batch.size()) {
    throw DimensionError("clip norms length mismatch: " +
                         shape_text(terms.clip_norms.size(), batch.size()));
  }
  if (sum.size() != params.values.size()) {
    throw DimensionError("gradient buffer length mismatch: " +
                         shape_text(sum.size(), params.values.size()));
  }
  std::fill(sum.begin(), sum.end(), 0.0);
  Vec64 scratch(params.values.size());
  Vec64 losses(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double w = terms.weights.empty() ? 1.0 : terms.weights[i];
    std::span<const double> noise;
    if (!terms.noise.empty()) noise = terms.noise[i];
    if (w == 0.0) {
      losses[i] = example_loss(params, batch[i], noise);
      continue;
    }
    losses[i] = example_gradient(params, batch[i], noise, scratch);
    double scale = w;
    if (!terms.clip_norms.empty() && std::isfinite(terms.clip_norms[i])) {
      const double c = terms.clip_norms[i];
      if (!(c > 0.0)) throw ParameterError("per-example clip norm must be positive");
      const double norm = l2_norm(scratch);
      if (norm > c) scale = w * (c / norm);
    }
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += scale * scratch[j];
  }
  return losses;
}

GradResult grad_with_loss(const ParamState& params, const Batch& batch) {
  if (batch.empty()) throw InputError("grad: empty batch");
  GradResult r;
  r.gradient.assign(params.values.size(), 0.0);
  r.loss.per_example = accumulate_gradient(params, batch, {}, r.gradient);
  const auto n = static_cast<double>(batch.size());
  for (double& g : r.gradient) g /= n;
  double s = 0.0;
  for (double l : r.loss.per_example) s += l;
  r.loss.mean = s / n;
  return r;
}

Vec64 grad(const ParamState& params, const Batch& batch) {
  return grad_with_loss(params, batch).gradient;
}

Vec64 softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  Vec64 p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

std::int32_t predict_label(const ParamState& params, const Example& ex) {
  const Vec64 z = logits(params, ex);
  // max_element returns the first maximum, i.e. the lowest index on ties.
  return static_cast<std::int32_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

std::vector<std::int32_t> predict(const ParamState& params, const Batch& batch) {
  std::vector<std::int32_t> out;
  out.reserve(batch.size());
  for (const auto& ex : batch) out.push_back(predict_label(params, ex));
  return out;
}

Vec64 predict_distribution(const ParamState& params, const Example& ex) {
  return softmax(logits(params, ex));
}

std::vector<TokenLoss> per_token_loss(const ParamState& params,
                                      std::span<const std::int32_t> tokens) {
  if (params.spec.kind != ModelKind::CharLM) {
    throw InputError("per_token_loss requires a CharLM model");
  }
  const std::size_t k = params.spec.context;
  if (tokens.size() <= k) {
    throw InputError("sequence too short: need more than " + std::to_string(k) + " tokens, got " +
                     std::to_string(tokens.size()));
  }
  std::vector<TokenLoss> out;
  out.reserve(tokens.size() - k);
  Example ex;
  for (std::size_t p = k; p < tokens.size(); ++p) {
    ex.context.assign(tokens.begin() + static_cast<std::ptrdiff_t>(p - k),
                      tokens.begin() + static_cast<std::ptrdiff_t>(p));
    ex.target = tokens[p];
    out.push_back({p, tokens[p], example_loss(params, ex)});
  }
  return out;
}

}  // namespace r2u
