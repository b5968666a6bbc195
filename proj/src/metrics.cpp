#include "r2u/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "r2u/error.hpp"

namespace r2u {

namespace {

void require_role(const ParamState& p, ParamRole role, const char* metric) {
  if (p.role != role) {
    throw InputError(std::string(metric) + " expects a model with role " + to_string(role) +
                     ", got " + to_string(p.role));
  }
}

double mean_loss(const ParamState& p, const LabeledDataset& d) {
  return forward_loss(p, full_batch(d)).mean;
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double accuracy(const ParamState& p, const LabeledDataset& d) {
  if (p.spec.kind == ModelKind::Quadratic) throw InputError("accuracy needs a classifier model");
  if (d.empty()) throw InputError("accuracy: dataset is empty");
  std::size_t correct = 0;
  for (const auto& ex : d.examples) correct += predict_label(p, ex) == ex.target ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

double efficiency_metric(const ParamState& unlearned, const LabeledDataset& forget) {
  require_role(unlearned, ParamRole::Unlearned, "efficiency_metric");
  return mean_loss(unlearned, forget);
}

double retention_metric(const ParamState& unlearned, const LabeledDataset& retain) {
  require_role(unlearned, ParamRole::Unlearned, "retention_metric");
  return accuracy(unlearned, retain);
}

double resistance_metric(const ParamState& post_recovery, const LabeledDataset& forget) {
  require_role(post_recovery, ParamRole::PostRecovery, "resistance_metric");
  return mean_loss(post_recovery, forget);
}

std::optional<std::size_t> steps_to_threshold(
    const Trajectory& traj, const std::function<bool(const TrajectoryRow&)>& pred) {
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (pred(traj[i])) return i + 1;
  }
  return std::nullopt;
}

std::vector<SlicePoint> loss_slice(const ParamState& p, const LabeledDataset& d,
                                   std::span<const double> direction,
                                   std::span<const double> offsets) {
  if (direction.size() != p.values.size()) {
    throw DimensionError("loss_slice: direction length " + std::to_string(direction.size()) +
                         " vs " + std::to_string(p.values.size()) + " parameters");
  }
  const Batch batch = full_batch(d);
  std::vector<SlicePoint> out;
  out.reserve(offsets.size());
  for (double t : offsets) {
    if (t == 0.0) {
      out.push_back({t, forward_loss(p, batch).mean});
      continue;
    }
    Vec64 v = p.values;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += t * direction[i];
    out.push_back({t, forward_loss(p.with_values(std::move(v), p.role), batch).mean});
  }
  return out;
}

bool plateau_reached(std::span<const double> series, std::size_t window, double tolerance) {
  if (window == 0 || series.size() <= window) return false;
  const double now = series.back();
  const double then = series[series.size() - 1 - window];
  return std::abs(now - then) < tolerance * std::max(std::abs(then), 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman: length mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace r2u
