#include "r2u/unlearn.hpp"

#include <cmath>

#include "r2u/metrics.hpp"

namespace r2u {

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Learning:
      return "learning";
    case Phase::Unlearning:
      return "unlearning";
    case Phase::Recovery:
      return "recovery";
  }
  return "?";
}

bool StopCondition::satisfied(double forget_loss, double forget_acc) const {
  switch (kind) {
    case Kind::None:
      return false;
    case Kind::ForgetAccAtMost:
      return forget_acc <= threshold;
    case Kind::ForgetLossAtLeast:
      return forget_loss >= threshold;
  }
  return false;
}

void UnlearnConfig::validate() const {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw ParameterError("unlearning rate must be > 0");
  if (!std::isfinite(stop.threshold)) throw ParameterError("stop threshold must be finite");
  if (minibatch && *minibatch == 0) throw ParameterError("unlearning minibatch must be >= 1");
}

ParamState ga_step(const ParamState& p, const Batch& forget_batch, double rate) {
  if (forget_batch.empty()) throw InputError("ga_step: forget batch is empty");
  const Vec64 g = grad(p, forget_batch);
  return p.with_values(axpy(rate, g, p.values), ParamRole::Unlearned);
}

RecoverResult recover(const ParamState& p, const LabeledDataset& finetune, const RecoverConfig& cfg,
                      SeededRng& rng, const LabeledDataset* measure_forget,
                      const StepObserver& observer) {
  if (p.role != ParamRole::Unlearned) {
    throw InputError(std::string("recover expects an unlearned model, got role ") +
                     to_string(p.role));
  }
  if (finetune.empty()) throw InputError("recover: fine-tuning set is empty");
  if (!(cfg.rate >= 0.0)) throw ParameterError("recovery rate must be >= 0");
  if (cfg.minibatch && *cfg.minibatch == 0) throw ParameterError("recovery minibatch must be >= 1");

  RecoverResult r{p, {}, std::nullopt};
  const Batch all = full_batch(finetune);
  Vec64 losses;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = cfg.minibatch ? sample_batch(finetune, *cfg.minibatch, rng) : all;
    const Vec64 g = grad(r.params, batch);
    r.params = r.params.with_values(axpy(-cfg.rate, g, r.params.values), ParamRole::PostRecovery);

    TrajectoryRow row;
    row.step = step;
    row.phase = Phase::Recovery;
    row.recovery_loss = forward_loss(r.params, all).mean;
    if (measure_forget) {
      const SetScore s = score_set(r.params, *measure_forget);
      row.forget_loss = s.loss;
      row.forget_acc = s.acc;
    }
    if (observer) observer(r.params, row);
    r.trajectory.push_back(row);
    losses.push_back(*row.recovery_loss);
    if (cfg.stop_at_plateau && plateau_reached(losses, cfg.plateau_window, cfg.plateau_tolerance)) {
      r.plateau_step = step;
      break;
    }
  }
  if (cfg.steps == 0) r.params.role = ParamRole::PostRecovery;
  return r;
}

}  // namespace r2u
