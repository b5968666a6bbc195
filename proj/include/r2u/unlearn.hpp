#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/error.hpp"
#include "r2u/model.hpp"
#include "r2u/numeric.hpp"

namespace r2u {

enum class Phase { Learning, Unlearning, Recovery };

const char* to_string(Phase phase);

struct TrajectoryRow {
  std::size_t step = 0;
  std::optional<std::size_t> epoch;
  Phase phase = Phase::Unlearning;
  double forget_loss = std::numeric_limits<double>::quiet_NaN();
  double forget_acc = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> retain_acc;
  std::optional<double> recovery_loss;
};

using Trajectory = std::vector<TrajectoryRow>;

// Read-only measurement hook run after every step. It may fill the
// optional columns of the row; it never feeds back into the update.
using StepObserver = std::function<void(const ParamState&, TrajectoryRow&)>;

struct StopCondition {
  enum class Kind { None, ForgetAccAtMost, ForgetLossAtLeast };
  Kind kind = Kind::None;
  double threshold = 0.0;

  static StopCondition none() { return {}; }
  static StopCondition forget_acc_at_most(double t) { return {Kind::ForgetAccAtMost, t}; }
  static StopCondition forget_loss_at_least(double t) { return {Kind::ForgetLossAtLeast, t}; }

  bool satisfied(double forget_loss, double forget_acc) const;
};

struct UnlearnConfig {
  double rate = 1e-5;
  std::size_t max_steps = 1000;
  StopCondition stop;
  // nullopt: every step uses the whole forget set; otherwise a minibatch of
  // this size sampled with replacement.
  std::optional<std::size_t> minibatch;

  void validate() const;
};

// Anything that exposes examples by index: the forget data handed to the
// unlearning loop.
template <typename S>
concept ExampleSource = requires(const S& s, std::size_t i) {
  { s.size() } -> std::convertible_to<std::size_t>;
  { s[i] } -> std::convertible_to<const Example&>;
};

struct SetScore {
  double loss = std::numeric_limits<double>::quiet_NaN();
  double acc = std::numeric_limits<double>::quiet_NaN();
};

// Mean loss and accuracy over every example of the source (accuracy is NaN
// for the Quadratic model).
template <ExampleSource S>
SetScore score_set(const ParamState& p, const S& source) {
  const std::size_t n = source.size();
  if (n == 0) throw InputError("cannot score an empty set");
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Example& ex = source[i];
    const auto s = score_example(p, ex);
    loss += s.loss;
    correct += s.predicted == ex.target ? 1 : 0;
  }
  SetScore out;
  out.loss = loss / static_cast<double>(n);
  if (p.spec.kind != ModelKind::Quadratic) {
    out.acc = static_cast<double>(correct) / static_cast<double>(n);
  }
  return out;
}

// theta + rate * grad(theta; forget_batch), role Unlearned.
ParamState ga_step(const ParamState& p, const Batch& forget_batch, double rate);

struct UnlearnResult {
  ParamState params;
  Trajectory trajectory;
  SetScore entry;   // forget-set score before the first step
  bool stopped = false;  // stop condition met (at entry or after a step)
};

// Gradient ascent on the forget data until the stop condition holds on the
// whole forget set or max_steps is reached. Only `forget` is read; the
// observer may measure other data but cannot influence the update.
template <ExampleSource S>
UnlearnResult unlearn_until(ParamState p, const S& forget, const UnlearnConfig& cfg,
                            SeededRng& rng, const StepObserver& observer = {}) {
  cfg.validate();
  const std::size_t n = forget.size();
  if (n == 0) throw InputError("unlearn_until: forget set is empty");

  UnlearnResult r{std::move(p), {}, {}, false};
  r.entry = score_set(r.params, forget);
  if (r.entry.loss != r.entry.loss) throw NumericError("unlearn_until: non-finite entry loss");
  if (cfg.stop.satisfied(r.entry.loss, r.entry.acc)) {
    r.stopped = true;
    return r;
  }
  Batch batch;
  if (!cfg.minibatch) {
    batch.reserve(n);
    for (std::size_t i = 0; i < n; ++i) batch.push_back(forget[i]);
  }
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    if (cfg.minibatch) {
      batch.clear();
      for (std::size_t i = 0; i < *cfg.minibatch; ++i) batch.push_back(forget[rng.next_index(n)]);
    }
    r.params = ga_step(r.params, batch, cfg.rate);
    const SetScore s = score_set(r.params, forget);
    TrajectoryRow row;
    row.step = step;
    row.phase = Phase::Unlearning;
    row.forget_loss = s.loss;
    row.forget_acc = s.acc;
    if (observer) observer(r.params, row);
    r.trajectory.push_back(row);
    if (cfg.stop.satisfied(s.loss, s.acc)) {
      r.stopped = true;
      break;
    }
  }
  return r;
}

struct RecoverConfig {
  double rate = 1e-3;
  std::size_t steps = 100;
  std::optional<std::size_t> minibatch;  // nullopt: full fine-tuning set
  // Stop once the fine-tuning loss plateaus (see plateau_reached).
  bool stop_at_plateau = false;
  std::size_t plateau_window = 20;
  double plateau_tolerance = 1e-3;
};

struct RecoverResult {
  ParamState params;
  Trajectory trajectory;
  std::optional<std::size_t> plateau_step;
};

// Gradient-descent fine-tuning of an unlearned model on the recovery
// fine-tuning split. `measure_forget`, when given, is scored after every
// step for the trajectory only. Throws InputError unless p.role is Unlearned.
RecoverResult recover(const ParamState& p, const LabeledDataset& finetune, const RecoverConfig& cfg,
                      SeededRng& rng, const LabeledDataset* measure_forget = nullptr,
                      const StepObserver& observer = {});

}  // namespace r2u
