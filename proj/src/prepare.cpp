#include "r2u/prepare.hpp"

#include <cmath>
#include <limits>

#include "r2u/error.hpp"

namespace r2u {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Summary {
  double loss = kNaN;
  double acc = kNaN;
};

// Mean loss and accuracy over the examples of `batch` accepted by `keep`.
template <typename Pred>
Summary summarize(const ParamState& p, const Batch& batch, Pred keep) {
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t n = 0;
  for (const auto& ex : batch) {
    if (!keep(ex)) continue;
    const auto s = score_example(p, ex);
    loss += s.loss;
    correct += s.predicted == ex.target ? 1 : 0;
    ++n;
  }
  if (n == 0) return {};
  Summary out{loss / static_cast<double>(n), kNaN};
  if (p.spec.kind != ModelKind::Quadratic) {
    out.acc = static_cast<double>(correct) / static_cast<double>(n);
  }
  return out;
}

bool is_high(const Example& ex) { return ex.tag == RiskTag::HighRisk; }
bool is_low(const Example& ex) { return ex.tag != RiskTag::HighRisk; }

double mean_of(const Vec64& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

void require_nonempty(const Batch& b, const char* what) {
  if (b.empty()) throw ParameterError(std::string(what) + " batch is empty");
}

void check_unit_interval(double v, const char* name) {
  if (!(v >= 0.0 && v <= 1.0)) throw ParameterError(std::string(name) + " must lie in [0, 1]");
}

void check_positive(double v, const char* name) {
  if (!(v > 0.0)) throw ParameterError(std::string(name) + " must be positive");
}

void check_non_negative(double v, const char* name) {
  if (!(v >= 0.0)) throw ParameterError(std::string(name) + " must be non-negative");
}

// theta - eta * g, the single update rule shared by every trainer.
ParamState descend(const ParamState& p, const Vec64& g, double eta) {
  return p.with_values(axpy(-eta, g, p.values), p.role);
}

Vec64 mean_gradient(const ParamState& p, const Batch& batch, const ExampleTerms& terms,
                    double divisor, Vec64* losses) {
  Vec64 g(p.values.size());
  auto l = accumulate_gradient(p, batch, terms, g);
  for (double& v : g) v /= divisor;
  if (losses) *losses = std::move(l);
  return g;
}

}  // namespace

void MetaHyper::validate() const {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be >= 0");
  if (!(eta > 0.0)) throw ParameterError("eta must be > 0");
  if (!(lambda1 >= 0.0)) throw ParameterError("lambda1 must be >= 0");
  if (!(lambda2 >= 0.0)) throw ParameterError("lambda2 must be >= 0");
  if (!(lambda3 >= 0.0)) throw ParameterError("lambda3 must be >= 0");
  if (batch_forget == 0) throw ParameterError("batch_forget must be >= 1");
  if (batch_retain == 0) throw ParameterError("batch_retain must be >= 1");
  if (batch_recovery == 0) throw ParameterError("batch_recovery must be >= 1");
  if (batch_full == 0) throw ParameterError("batch_full must be >= 1");
}

const char* to_string(TrainerKind kind) {
  switch (kind) {
    case TrainerKind::Ready2Unlearn:
      return "ready2unlearn";
    case TrainerKind::Standard:
      return "standard";
    case TrainerKind::Reweighted:
      return "reweighted";
    case TrainerKind::Noisy:
      return "noisy";
    case TrainerKind::Clipped:
      return "clipped";
    case TrainerKind::Phased:
      return "phased";
    case TrainerKind::Goldfish:
      return "goldfish";
    case TrainerKind::EmbedNoise:
      return "embed_noise";
    case TrainerKind::DpClipNoise:
      return "dp_clip_noise";
  }
  return "?";
}

TrainerKind trainer_kind_from_string(const std::string& name) {
  for (auto k : {TrainerKind::Ready2Unlearn, TrainerKind::Standard, TrainerKind::Reweighted,
                 TrainerKind::Noisy, TrainerKind::Clipped, TrainerKind::Phased,
                 TrainerKind::Goldfish, TrainerKind::EmbedNoise, TrainerKind::DpClipNoise}) {
    if (name == to_string(k)) return k;
  }
  throw ValidationError("unknown trainer kind '" + name + "'");
}

TrainerSettings TrainerSettings::neutral() {
  TrainerSettings s;
  s.reweight_high = 1.0;
  s.noise_sigma = 0.0;
  s.clip_norm = std::numeric_limits<double>::infinity();
  s.goldfish_p = 0.0;
  s.embed_noise_alpha = 0.0;
  s.dp_clip_norm = std::numeric_limits<double>::infinity();
  s.dp_noise_multiplier = 0.0;
  return s;
}

void TrainerSettings::validate() const {
  check_non_negative(reweight_high, "reweight_high");
  check_non_negative(noise_sigma, "noise_sigma");
  check_positive(clip_norm, "clip_norm");
  check_unit_interval(goldfish_p, "goldfish_p");
  check_non_negative(embed_noise_alpha, "embed_noise_alpha");
  check_positive(dp_clip_norm, "dp_clip_norm");
  check_non_negative(dp_noise_multiplier, "dp_noise_multiplier");
  if (learning_rate) check_positive(*learning_rate, "learning_rate");
  if (dp_noise_multiplier > 0.0 && !std::isfinite(dp_clip_norm)) {
    throw ParameterError("dp_noise_multiplier needs a finite dp_clip_norm");
  }
}

ParamState inner_ascent_step(const ParamState& p, const Batch& xf, double alpha) {
  require_nonempty(xf, "forget");
  const Vec64 g = grad(p, xf);
  return p.with_values(axpy(alpha, g, p.values), ParamRole::Adapted);
}

GradBundle meta_gradients(const ParamState& adapted, const Batch& xf, const Batch& xr,
                          const Batch* xrc) {
  require_nonempty(xf, "forget");
  require_nonempty(xr, "retain");
  GradBundle b;
  b.g0 = grad(adapted, xf);
  b.g1 = grad(adapted, xr);
  if (xrc) {
    require_nonempty(*xrc, "recovery");
    b.g2 = grad(adapted, *xrc);
  }
  return b;
}

Vec64 combine_meta_gradients(const GradBundle& g, const MetaHyper& h) {
  const std::size_t n = g.g0.size();
  if (g.g1.size() != n || g.g3.size() != n || (g.g2 && g.g2->size() != n)) {
    throw DimensionError("gradient bundle vectors differ in length");
  }
  Vec64 c(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = -g.g0[i] + h.lambda1 * g.g1[i];
    if (g.g2) v += h.lambda2 * (*g.g2)[i];
    c[i] = v + h.lambda3 * g.g3[i];
  }
  return c;
}

StepResult ready2unlearn_update(const ParamState& p, const Batch& xf, const Batch& xr,
                                const Batch* xrc, const Batch& x, const MetaHyper& h) {
  require_nonempty(x, "full");
  const ParamState adapted = inner_ascent_step(p, xf, h.alpha);
  GradBundle bundle = meta_gradients(adapted, xf, xr, xrc);
  auto g3 = grad_with_loss(p, x);
  bundle.g3 = std::move(g3.gradient);

  StepResult r{descend(p, combine_meta_gradients(bundle, h), h.eta), {}};
  r.row.trainer = TrainerKind::Ready2Unlearn;
  const auto f = summarize(p, xf, [](const Example&) { return true; });
  const auto rt = summarize(p, xr, [](const Example&) { return true; });
  r.row.forget_loss = f.loss;
  r.row.forget_acc = f.acc;
  r.row.retain_loss = rt.loss;
  r.row.retain_acc = rt.acc;
  r.row.full_loss = g3.loss.mean;
  r.row.high_risk_examples = xf.size();
  return r;
}

StepResult ready2unlearn_step(const ParamState& p, const RiskPartition& part, const MetaHyper& h,
                              SeededRng& rng) {
  if (part.forget.empty()) throw ParameterError("ready2unlearn: forget set is empty");
  if (part.retain.empty()) throw ParameterError("ready2unlearn: retain set is empty");
  const Batch xf = sample_batch(part.forget, h.batch_forget, rng);
  const Batch xr = sample_batch(part.retain, h.batch_retain, rng);
  std::optional<Batch> xrc;
  if (part.recovery && !part.recovery->empty()) {
    xrc = sample_batch(*part.recovery, h.batch_recovery, rng);
  }
  const Batch x = sample_batch(part.full, h.batch_full, rng);
  return ready2unlearn_update(p, xf, xr, xrc ? &*xrc : nullptr, x, h);
}

StepResult baseline_update(TrainerKind kind, const TrainerSettings& s, const ParamState& p,
                           const Batch& batch, const MetaHyper& h, SeededRng& rng) {
  if (kind == TrainerKind::Ready2Unlearn) {
    throw ParameterError("baseline_update: Ready2Unlearn is not a baseline");
  }
  s.validate();
  require_nonempty(batch, "training");
  const std::size_t n = batch.size();
  double divisor = static_cast<double>(n);
  Vec64 weights;
  std::vector<Vec64> noise;
  Vec64 clips;

  switch (kind) {
    case TrainerKind::Standard:
    case TrainerKind::Phased:
      break;
    case TrainerKind::Reweighted:
      weights.resize(n);
      for (std::size_t i = 0; i < n; ++i) weights[i] = is_high(batch[i]) ? s.reweight_high : 1.0;
      break;
    case TrainerKind::Noisy:
      if (s.noise_sigma > 0.0) {
        noise.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          if (is_high(batch[i])) noise[i] = gaussian(rng, p.spec.input_width(), s.noise_sigma);
        }
      }
      break;
    case TrainerKind::EmbedNoise:
      if (s.embed_noise_alpha > 0.0) {
        const std::size_t width = p.spec.input_width();
        const double scale = s.embed_noise_alpha / std::sqrt(static_cast<double>(width));
        noise.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          if (is_high(batch[i])) noise[i] = uniform(rng, width, -scale, scale);
        }
      }
      break;
    case TrainerKind::Clipped:
      if (std::isfinite(s.clip_norm)) {
        Batch high;
        for (const auto& ex : batch) {
          if (is_high(ex)) high.push_back(ex);
        }
        if (!high.empty()) {
          const double norm = l2_norm(grad(p, high));
          if (norm > s.clip_norm) {
            const double factor = s.clip_norm / norm;
            weights.resize(n);
            for (std::size_t i = 0; i < n; ++i) weights[i] = is_high(batch[i]) ? factor : 1.0;
          }
        }
      }
      break;
    case TrainerKind::Goldfish:
      if (s.goldfish_p > 0.0) {
        weights.assign(n, 1.0);
        std::size_t survivors = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (is_high(batch[i]) && rng.next_bernoulli(s.goldfish_p)) weights[i] = 0.0;
          survivors += weights[i] != 0.0 ? 1 : 0;
        }
        if (survivors == 0) {
          StepResult skipped{p, {}};
          skipped.row.trainer = kind;
          skipped.row.skipped = true;
          return skipped;
        }
        divisor = static_cast<double>(survivors);
      }
      break;
    case TrainerKind::DpClipNoise:
      if (std::isfinite(s.dp_clip_norm)) {
        clips.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
          clips[i] = is_high(batch[i]) ? s.dp_clip_norm : std::numeric_limits<double>::infinity();
        }
      }
      break;
    case TrainerKind::Ready2Unlearn:
      break;
  }

  Vec64 losses;
  Vec64 g = mean_gradient(p, batch, ExampleTerms{weights, noise, clips}, divisor, &losses);
  if (kind == TrainerKind::DpClipNoise && s.dp_noise_multiplier > 0.0) {
    const double sigma = s.dp_noise_multiplier * s.dp_clip_norm / static_cast<double>(n);
    const Vec64 z = gaussian(rng, g.size(), sigma);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += z[i];
  }

  StepResult r{descend(p, g, s.learning_rate.value_or(h.eta)), {}};
  r.row.trainer = kind;
  const auto f = summarize(p, batch, is_high);
  const auto rt = summarize(p, batch, is_low);
  r.row.forget_loss = f.loss;
  r.row.forget_acc = f.acc;
  r.row.retain_loss = rt.loss;
  r.row.retain_acc = rt.acc;
  r.row.full_loss = noise.empty() ? mean_of(losses) : forward_loss(p, batch).mean;
  for (const auto& ex : batch) r.row.high_risk_examples += is_high(ex) ? 1 : 0;
  return r;
}

StepResult baseline_step(TrainerKind kind, const TrainerSettings& s, const ParamState& p,
                         const RiskPartition& part, const MetaHyper& h, const StepContext& ctx,
                         SeededRng& rng) {
  const bool retain_only = kind == TrainerKind::Phased && 2 * ctx.epoch >= ctx.total_epochs;
  const Batch batch = sample_batch(retain_only ? part.retain : part.full, h.batch_full, rng);
  return baseline_update(kind, s, p, batch, h, rng);
}

Schedule Schedule::constant(TrainerKind kind, std::size_t epochs) {
  return Schedule{std::vector<TrainerKind>(epochs, kind)};
}

Schedule Schedule::prepare_last(std::size_t epochs, std::size_t prepared_epochs) {
  if (prepared_epochs > epochs) {
    throw ParameterError("prepared epochs (" + std::to_string(prepared_epochs) +
                         ") exceed total epochs (" + std::to_string(epochs) + ")");
  }
  Schedule s;
  s.per_epoch.assign(epochs - prepared_epochs, TrainerKind::Standard);
  s.per_epoch.insert(s.per_epoch.end(), prepared_epochs, TrainerKind::Ready2Unlearn);
  return s;
}

TrainResult train(const ModelSpec& spec, const RiskPartition& part, const TrainerSettings& s,
                  const MetaHyper& h, const Schedule& schedule, SeededRng& rng) {
  return train_from(init_params(spec, rng), part, s, h, schedule, rng);
}

TrainResult train_from(ParamState start, const RiskPartition& part, const TrainerSettings& s,
                       const MetaHyper& h, const Schedule& schedule, SeededRng& rng) {
  h.validate();
  s.validate();
  if (part.full.empty()) throw ParameterError("train: training set is empty");
  const std::size_t steps_per_epoch = (part.full.size() + h.batch_full - 1) / h.batch_full;
  const std::size_t epochs = schedule.per_epoch.size();

  TrainResult out{std::move(start), {}};
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const TrainerKind kind = schedule.per_epoch[epoch];
    for (std::size_t i = 0; i < steps_per_epoch; ++i) {
      if (h.outer_steps > 0 && step >= h.outer_steps) break;
      StepResult r = kind == TrainerKind::Ready2Unlearn
                         ? ready2unlearn_step(out.params, part, h, rng)
                         : baseline_step(kind, s, out.params, part, h, {step, epoch, epochs}, rng);
      r.row.step = ++step;
      r.row.epoch = epoch;
      out.params = std::move(r.params);
      out.log.push_back(r.row);
    }
  }
  out.params.role = ParamRole::Prepared;
  return out;
}

}  // namespace r2u
