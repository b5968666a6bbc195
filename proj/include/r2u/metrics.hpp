#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/model.hpp"
#include "r2u/unlearn.hpp"

namespace r2u {

struct MetricReport {
  double efficiency = 0.0;                // forget loss of the unlearned model
  double retention = 0.0;                 // retain accuracy of the unlearned model
  std::optional<double> resistance;       // forget loss after recovery
  std::optional<std::size_t> steps_to_stop;
  double pre_unlearn_forget_acc = 0.0;
};

// Fraction of examples whose argmax prediction equals the label. Throws
// InputError for the Quadratic model or an empty dataset.
double accuracy(const ParamState& p, const LabeledDataset& d);

// Mean loss of the unlearned model on the forget set. Higher means the
// unlearning went further. Requires role Unlearned.
double efficiency_metric(const ParamState& unlearned, const LabeledDataset& forget);

// Accuracy of the unlearned model on the retain set. Requires role Unlearned.
double retention_metric(const ParamState& unlearned, const LabeledDataset& retain);

// Mean loss of the post-recovery model on the forget set. Higher means the
// forgotten data was regained less. Requires role PostRecovery.
double resistance_metric(const ParamState& post_recovery, const LabeledDataset& forget);

// 1-based index of the first row satisfying the predicate; nullopt when no
// row does.
std::optional<std::size_t> steps_to_threshold(const Trajectory& traj,
                                              const std::function<bool(const TrajectoryRow&)>& pred);

struct SlicePoint {
  double offset = 0.0;
  double loss = 0.0;
};

// Mean loss over d at values + t * direction for each offset t.
std::vector<SlicePoint> loss_slice(const ParamState& p, const LabeledDataset& d,
                                   std::span<const double> direction,
                                   std::span<const double> offsets);

// True once the last `window` steps changed the series by less than
// `tolerance`, relative for values above 1 and absolute below:
// |s[t] - s[t - window]| < tolerance * max(|s[t - window]|, 1).
bool plateau_reached(std::span<const double> series, std::size_t window, double tolerance);

// Spearman rank correlation with average ranks for ties. NaN when either
// side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace r2u
