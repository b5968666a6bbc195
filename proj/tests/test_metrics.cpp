#include <doctest.h>

#include <cmath>
#include <limits>

#include "r2u/error.hpp"
#include "r2u/metrics.hpp"
#include "support.hpp"

using namespace r2u;
using test::quad;
using test::qx;

namespace {

// Classifier whose prediction is the argmax of a fixed bias vector.
ParamState bias_model(std::vector<double> bias) {
  const auto spec = ModelSpec::classifier({1, bias.size()});
  auto v = Vec64(parameter_count(make_layout(spec)), 0.0);
  const auto p = make_params(spec, v);
  const auto off = p.slot("b0").offset;
  for (std::size_t i = 0; i < bias.size(); ++i) v[off + i] = bias[i];
  return p.with_values(v, ParamRole::Unlearned);
}

LabeledDataset labelled(std::vector<std::int32_t> labels, std::size_t classes) {
  std::vector<Example> ex;
  for (auto l : labels) {
    Example e;
    e.input = {0.0};
    e.target = l;
    ex.push_back(e);
  }
  return LabeledDataset::from_examples("labels", classes, ex);
}

}  // namespace

TEST_CASE("accuracy examples") {
  const auto m = bias_model({0.0, 1.0, 0.0});
  CHECK(accuracy(m, labelled({1, 1, 1}, 3)) == 1.0);
  CHECK(accuracy(m, labelled({1, 1, 1, 2}, 3)) == 0.75);
  CHECK(retention_metric(m, labelled({1, 0}, 3)) == 0.5);
  CHECK_THROWS_AS(accuracy(quad(0.0), test::qset({1.0})), InputError);

  // Random 10-class model on balanced data sits near chance.
  SeededRng rng(5);
  const auto d = synth_blobs(10, 100, 10, 4.0, rng);
  const auto p = init_params(ModelSpec::classifier({10, 10}), rng);
  const double acc = accuracy(p, d);
  CHECK(acc >= 0.0);
  CHECK(acc <= 0.3);
}

TEST_CASE("efficiency and resistance: QUAD oracle") {
  const auto forget = test::qset({1.0}, RiskTag::HighRisk);
  CHECK(std::abs(efficiency_metric(quad(-0.5, ParamRole::Unlearned), forget) - 1.125) <= 1e-12);
  CHECK(efficiency_metric(quad(1.0, ParamRole::Unlearned), forget) == 0.0);
  CHECK(efficiency_metric(quad(-2.0, ParamRole::Unlearned), forget) >
        efficiency_metric(quad(-0.5, ParamRole::Unlearned), forget));
  CHECK(std::abs(resistance_metric(quad(-0.25, ParamRole::PostRecovery), forget) - 0.78125) <= 1e-12);
  CHECK(resistance_metric(quad(1.0, ParamRole::PostRecovery), forget) == 0.0);
  CHECK(resistance_metric(quad(-0.9, ParamRole::PostRecovery), forget) >=
        efficiency_metric(quad(-0.5, ParamRole::Unlearned), forget));
  CHECK_THROWS_AS(efficiency_metric(quad(0.0, ParamRole::Prepared), forget), InputError);
  CHECK_THROWS_AS(resistance_metric(quad(0.0, ParamRole::Unlearned), forget), InputError);
}

TEST_CASE("efficiency is the forget loss") {
  SeededRng rng(2);
  const auto d = synth_blobs(3, 10, 4, 2.0, rng);
  auto p = init_params(ModelSpec::classifier({4, 5, 3}), rng);
  p = p.with_values(p.values, ParamRole::Unlearned);
  CHECK(std::abs(efficiency_metric(p, d) - forward_loss(p, full_batch(d)).mean) <= 1e-12);
  const double r = retention_metric(p, d);
  CHECK(r >= 0.0);
  CHECK(r <= 1.0);
}

TEST_CASE("steps_to_threshold examples") {
  Trajectory t(3);
  t[0].forget_acc = 0.9;
  t[1].forget_acc = 0.6;
  t[2].forget_acc = 0.4;
  auto le = [](double v) { return [v](const TrajectoryRow& r) { return r.forget_acc <= v; }; };
  CHECK(steps_to_threshold(t, le(0.5)) == 3);
  CHECK(steps_to_threshold(t, le(0.95)) == 1);
  CHECK_FALSE(steps_to_threshold(t, le(0.1)));
}

TEST_CASE("loss_slice examples") {
  const auto d = test::qset({1.0});
  const std::vector<double> dir{1.0};
  const std::vector<double> offs{-1.0, 0.0, 1.0};
  const auto p = quad(0.0);
  const auto s = loss_slice(p, d, dir, offs);
  REQUIRE(s.size() == 3);
  CHECK(std::abs(s[0].loss - 2.0) <= 1e-12);
  CHECK(std::abs(s[1].loss - 0.5) <= 1e-12);
  CHECK(std::abs(s[2].loss - 0.0) <= 1e-12);
  CHECK(s[0].offset == -1.0);
  CHECK(p.values[0] == 0.0);

  SeededRng rng(4);
  const auto blobs = synth_blobs(3, 10, 4, 2.0, rng);
  const auto cp = init_params(ModelSpec::classifier({4, 5, 3}), rng);
  const auto dir2 = gaussian(rng, cp.values.size(), 1.0);
  const std::vector<double> zero_off{0.0};
  CHECK(loss_slice(cp, blobs, dir2, zero_off)[0].loss == forward_loss(cp, full_batch(blobs)).mean);
  const Vec64 flat(cp.values.size(), 0.0);
  const auto c = loss_slice(cp, blobs, flat, offs);
  CHECK(c[0].loss == c[1].loss);
  CHECK(c[1].loss == c[2].loss);
  CHECK_THROWS_AS(loss_slice(cp, blobs, dir, offs), DimensionError);
}

TEST_CASE("plateau_reached") {
  const std::vector<double> flat{5, 4, 3, 2, 1.0, 1.0005, 0.9999, 1.0002};
  CHECK(plateau_reached(flat, 3, 1e-3));
  CHECK_FALSE(plateau_reached(flat, 4, 1e-3));
  const std::vector<double> vanishing{1e-3, 1e-5, 1e-7, 1e-9};
  CHECK(plateau_reached(vanishing, 2, 1e-4));
  const std::vector<double> large{1000, 1001, 1000.5};
  CHECK(plateau_reached(large, 2, 1e-3));
  CHECK_FALSE(plateau_reached(large, 1, 1e-4));
  const std::vector<double> short_series{1, 1};
  CHECK_FALSE(plateau_reached(short_series, 3, 1e-3));
}

TEST_CASE("spearman") {
  const std::vector<double> x{2, 4, 6, 8};
  const std::vector<double> down{40, 30, 20, 10};
  const std::vector<double> up{1, 2, 3, 100};
  const std::vector<double> ties{1, 1, 2, 2};
  CHECK(spearman(x, down) == doctest::Approx(-1.0));
  CHECK(spearman(x, up) == doctest::Approx(1.0));
  // Average ranks (1.5, 1.5, 3.5, 3.5) against (1, 2, 3, 4).
  CHECK(spearman(x, ties) == doctest::Approx(0.894427191).epsilon(1e-9));
  const std::vector<double> three{1, 2, 3};
  CHECK_THROWS_AS(spearman(x, three), DimensionError);
}
