#include <doctest.h>

#include <cmath>
#include <limits>

#include "r2u/error.hpp"
#include "r2u/prepare.hpp"
#include "support.hpp"

using namespace r2u;
using test::qloss;
using test::quad;
using test::qx;

namespace {

constexpr double kTol = 1e-12;

MetaHyper quad_hyper() {
  MetaHyper h;
  h.alpha = 0.1;
  h.eta = 0.01;
  h.lambda1 = 2;
  h.lambda2 = 3;
  h.lambda3 = 4;
  h.batch_forget = h.batch_retain = h.batch_recovery = h.batch_full = 1;
  return h;
}

RiskPartition quad_partition() {
  RiskPartition p;
  p.forget = test::qset({1.0}, RiskTag::HighRisk, "f");
  p.retain = test::qset({-1.0}, RiskTag::LowRisk, "r");
  std::vector<Example> all{qx(1.0, RiskTag::HighRisk), qx(-1.0)};
  p.full = LabeledDataset::from_examples("d", 1, all);
  p.forget.origin = {0};
  p.retain.origin = {1};
  auto rc = test::qset({2.0}, RiskTag::Recovery, "rc");
  rc.origin = {2};
  p.recovery = rc;
  return p;
}

struct Blobs {
  RiskPartition part;
  ModelSpec spec;
};

Blobs classifier_task(std::uint64_t seed) {
  SeededRng rng(seed);
  const auto d = synth_blobs(3, 30, 4, 3.0, rng);
  return {partition_by_class(d, 1), ModelSpec::classifier({4, 6, 3})};
}

Blobs lm_task(std::uint64_t seed) {
  SeededRng rng(seed);
  const auto s = styled_corpus_pair(rng, 4);
  const auto vocab = CharVocab::from_text(s.forget + s.recovery + s.recovery_finetune);
  return {partition_styled(s, vocab, 3), ModelSpec::char_lm(vocab.size(), 3, 4, 8)};
}

}  // namespace

TEST_CASE("inner_ascent_step: QUAD oracle") {
  const auto p = quad(0.0);
  const auto a = inner_ascent_step(p, {qx(1.0)}, 0.1);
  CHECK(std::abs(a.values[0] - (-0.1)) <= kTol);
  CHECK(a.role == ParamRole::Adapted);
  CHECK(std::abs(qloss(0.0, 1.0) - 0.5) <= kTol);
  CHECK(std::abs(forward_loss(a, {qx(1.0)}).mean - 0.605) <= kTol);
  CHECK(inner_ascent_step(p, {qx(1.0)}, 0.0).values[0] == 0.0);
  CHECK(inner_ascent_step(quad(1.0), {qx(1.0)}, 0.3).values[0] == 1.0);
  CHECK_THROWS_AS(inner_ascent_step(p, {}, 0.1), ParameterError);
}

TEST_CASE("inner ascent scales the QUAD loss by (1 + alpha)^2") {
  SeededRng rng(12);
  for (int t = 0; t < 100; ++t) {
    const double theta = rng.next_double() * 6 - 3;
    const double x = rng.next_double() * 6 - 3;
    const double alpha = rng.next_double();
    const auto a = inner_ascent_step(quad(theta), {qx(x)}, alpha);
    const double before = qloss(theta, x);
    const double after = forward_loss(a, {qx(x)}).mean;
    CHECK(std::abs(after - (1 + alpha) * (1 + alpha) * before) <= 1e-12 * std::max(1.0, after));
  }
}

TEST_CASE("meta_gradients: QUAD oracle, first order") {
  const auto adapted = quad(-0.1, ParamRole::Adapted);
  const Batch xrc{qx(2.0)};
  const auto g = meta_gradients(adapted, {qx(1.0)}, {qx(-1.0)}, &xrc);
  CHECK(std::abs(g.g0[0] - (-1.1)) <= kTol);
  CHECK(std::abs(g.g1[0] - 0.9) <= kTol);
  REQUIRE(g.g2);
  CHECK(std::abs((*g.g2)[0] - (-2.1)) <= kTol);
  // A second-order implementation would give g0 * (1 + alpha) = -1.21.
  CHECK(std::abs(g.g0[0] - (-1.1 * 1.1)) > 0.1);

  const auto half = meta_gradients(quad(0.5, ParamRole::Adapted), {qx(1.0)}, {qx(-1.0)}, nullptr);
  CHECK(std::abs(half.g0[0] - (-0.5)) <= kTol);
  CHECK_FALSE(half.g2);

  const auto at_min = meta_gradients(quad(3.0, ParamRole::Adapted), {qx(3.0)}, {qx(3.0)}, nullptr);
  CHECK(at_min.g0[0] == 0.0);
  CHECK(at_min.g1[0] == 0.0);
}

TEST_CASE("ready2unlearn_update: QUAD oracle") {
  const auto h = quad_hyper();
  const Batch xrc{qx(2.0)};
  const auto r = ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, &xrc, {qx(0.5)}, h);
  CHECK(std::abs(r.params.values[0] - 0.054) <= kTol);

  auto zero = h;
  zero.lambda1 = zero.lambda2 = zero.lambda3 = 0;
  const auto z = ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, &xrc, {qx(0.5)}, zero);
  CHECK(std::abs(z.params.values[0] - (-0.011)) <= kTol);

  auto frozen = h;
  frozen.eta = 0;
  CHECK(ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, &xrc, {qx(0.5)}, frozen).params.values[0] ==
        0.0);

  // Without D_rc the lambda2 term drops out: 1.1 + 1.8 - 2.0 = 0.9.
  const auto no_rc = ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, nullptr, {qx(0.5)}, h);
  CHECK(std::abs(no_rc.params.values[0] - (-0.009)) <= kTol);
}

TEST_CASE("with all lambdas zero the step is +eta * g0 exactly") {
  SeededRng rng(4);
  for (int t = 0; t < 50; ++t) {
    MetaHyper h;
    h.alpha = rng.next_double();
    h.eta = rng.next_double() * 0.1;
    h.lambda1 = h.lambda2 = h.lambda3 = 0;
    const double theta = rng.next_double() * 4 - 2;
    const double xf = rng.next_double() * 4 - 2;
    const auto p = quad(theta);
    const auto r = ready2unlearn_update(p, {qx(xf)}, {qx(0.3)}, nullptr, {qx(0.1)}, h);
    const auto adapted = inner_ascent_step(p, {qx(xf)}, h.alpha);
    const double g0 = grad(adapted, {qx(xf)})[0];
    CHECK(r.params.values[0] == theta - h.eta * (-g0));
  }
}

TEST_CASE("combine_meta_gradients") {
  MetaHyper h;
  h.lambda1 = 2;
  h.lambda2 = 3;
  h.lambda3 = 4;
  GradBundle g{{1.0}, {10.0}, Vec64{100.0}, {1000.0}};
  CHECK(combine_meta_gradients(g, h)[0] == -1 + 20 + 300 + 4000);
  g.g2.reset();
  CHECK(combine_meta_gradients(g, h)[0] == -1 + 20 + 4000);
}

TEST_CASE("ready2unlearn_step samples the partition and matches the update") {
  const auto part = quad_partition();
  const auto h = quad_hyper();
  SeededRng rng(1);
  const auto r = ready2unlearn_step(quad(0.0), part, h, rng);
  // x ~ D is one of {1, -1}; recompute the update with that batch.
  const Batch xrc{qx(2.0)};
  const auto with_f = ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, &xrc, {qx(1.0)}, h);
  const auto with_r = ready2unlearn_update(quad(0.0), {qx(1.0)}, {qx(-1.0)}, &xrc, {qx(-1.0)}, h);
  CHECK((r.params.values == with_f.params.values || r.params.values == with_r.params.values));

  auto bad = part;
  bad.forget.examples.clear();
  bad.forget.origin.clear();
  SeededRng rng2(1);
  CHECK_THROWS_AS(ready2unlearn_step(quad(0.0), bad, h, rng2), ParameterError);
}

TEST_CASE("train: one epoch of one step equals one ready2unlearn_step") {
  auto part = quad_partition();
  auto h = quad_hyper();
  h.batch_full = 2;
  SeededRng a(7);
  SeededRng b(7);
  const auto trained = train_from(quad(0.0), part, TrainerSettings{}, h,
                                  Schedule::constant(TrainerKind::Ready2Unlearn, 1), a);
  const auto step = ready2unlearn_step(quad(0.0), part, h, b);
  CHECK(trained.params.values == step.params.values);
  CHECK(trained.params.role == ParamRole::Prepared);
  REQUIRE(trained.log.size() == 1);
  CHECK(trained.log[0].step == 1);
}

TEST_CASE("train: zero epochs, determinism, strictly increasing steps") {
  const auto task = classifier_task(3);
  MetaHyper h;
  h.eta = 0.05;
  h.batch_full = 16;
  SeededRng a(9);
  SeededRng init(9);
  const auto none = train(task.spec, task.part, TrainerSettings{}, h, Schedule::constant(TrainerKind::Standard, 0), a);
  CHECK(none.log.empty());
  CHECK(none.params.values == init_params(task.spec, init).values);

  SeededRng r1(10);
  SeededRng r2(10);
  const auto s = Schedule::prepare_last(3, 1);
  const auto t1 = train(task.spec, task.part, TrainerSettings{}, h, s, r1);
  const auto t2 = train(task.spec, task.part, TrainerSettings{}, h, s, r2);
  CHECK(t1.params.values == t2.params.values);
  REQUIRE(t1.log.size() == t2.log.size());
  CHECK(t1.log.size() == 3 * ((task.part.full.size() + 15) / 16));
  for (std::size_t i = 0; i < t1.log.size(); ++i) {
    CHECK(t1.log[i].step == i + 1);
    CHECK(t1.log[i].forget_loss == t2.log[i].forget_loss);
  }
  CHECK(t1.log.back().trainer == TrainerKind::Ready2Unlearn);
  CHECK(t1.log.front().trainer == TrainerKind::Standard);
}

TEST_CASE("schedules") {
  CHECK_THROWS_AS(Schedule::prepare_last(20, 21), ParameterError);
  for (auto k : Schedule::prepare_last(20, 20).per_epoch) CHECK(k == TrainerKind::Ready2Unlearn);
  for (auto k : Schedule::prepare_last(20, 0).per_epoch) CHECK(k == TrainerKind::Standard);
  const auto s = Schedule::prepare_last(5, 2).per_epoch;
  CHECK(s == std::vector<TrainerKind>{TrainerKind::Standard, TrainerKind::Standard, TrainerKind::Standard,
                                      TrainerKind::Ready2Unlearn, TrainerKind::Ready2Unlearn});
}

TEST_CASE("Reweighted: QUAD oracle") {
  TrainerSettings s;
  s.reweight_high = 0.5;
  MetaHyper h;
  h.eta = 0.1;
  SeededRng rng(1);
  const auto r = baseline_update(TrainerKind::Reweighted, s, quad(0.0), {qx(1.0, RiskTag::HighRisk), qx(-1.0)}, h, rng);
  CHECK(std::abs(r.params.values[0] - (-0.025)) <= kTol);
}

TEST_CASE("Clipped and DP clipping: QUAD oracles") {
  MetaHyper h;
  h.eta = 0.1;
  SeededRng rng(1);
  TrainerSettings s;
  s.clip_norm = 1.0;
  // High-risk mean gradient -3 clipped to -1 cancels the retain gradient +1.
  const auto c = baseline_update(TrainerKind::Clipped, s, quad(0.0), {qx(3.0, RiskTag::HighRisk), qx(-1.0)}, h, rng);
  CHECK(std::abs(c.params.values[0]) <= kTol);

  s.dp_clip_norm = 0.1;
  s.dp_noise_multiplier = 0.0;
  const auto d = baseline_update(TrainerKind::DpClipNoise, s, quad(0.0), {qx(1.0, RiskTag::HighRisk)}, h, rng);
  CHECK(std::abs(d.params.values[0] - 0.01) <= kTol);
}

TEST_CASE("Goldfish: p = 1 on an all-high-risk batch skips the step") {
  TrainerSettings s;
  s.goldfish_p = 1.0;
  MetaHyper h;
  SeededRng rng(1);
  const auto r = baseline_update(TrainerKind::Goldfish, s, quad(0.4), {qx(1.0, RiskTag::HighRisk)}, h, rng);
  CHECK(r.row.skipped);
  CHECK(r.params.values[0] == 0.4);
}

TEST_CASE("baselines at their neutral scalars reproduce Standard bit for bit") {
  const std::vector<TrainerKind> kinds{TrainerKind::Reweighted, TrainerKind::Noisy,     TrainerKind::Clipped,
                                       TrainerKind::Goldfish,   TrainerKind::EmbedNoise, TrainerKind::DpClipNoise};
  for (const auto& task : {classifier_task(5), lm_task(5)}) {
    MetaHyper h;
    h.eta = 0.05;
    h.batch_full = 8;
    const auto neutral = TrainerSettings::neutral();
    SeededRng init(2);
    const auto p0 = init_params(task.spec, init);
    for (auto kind : kinds) {
      SeededRng ra(33);
      SeededRng rb(33);
      auto pa = p0;
      auto pb = p0;
      for (std::size_t step = 1; step <= 5; ++step) {
        pa = baseline_step(TrainerKind::Standard, neutral, pa, task.part, h, {step, 0, 2}, ra).params;
        pb = baseline_step(kind, neutral, pb, task.part, h, {step, 0, 2}, rb).params;
      }
      INFO(to_string(kind));
      CHECK(pa.values == pb.values);
      CHECK(ra.draws() == rb.draws());
    }
  }
}

TEST_CASE("baselines at their default scalars differ from Standard") {
  const auto task = classifier_task(6);
  MetaHyper h;
  h.eta = 0.05;
  h.batch_full = 16;
  TrainerSettings s;
  s.clip_norm = 0.01;
  s.goldfish_p = 0.9;
  SeededRng init(2);
  const auto p0 = init_params(task.spec, init);
  SeededRng r0(1);
  const auto ref = baseline_step(TrainerKind::Standard, s, p0, task.part, h, {1, 0, 2}, r0).params;
  for (auto kind : {TrainerKind::Reweighted, TrainerKind::Noisy, TrainerKind::Clipped, TrainerKind::Goldfish,
                    TrainerKind::DpClipNoise}) {
    SeededRng r(1);
    const auto out = baseline_step(kind, s, p0, task.part, h, {1, 0, 2}, r);
    INFO(to_string(kind));
    if (out.row.high_risk_examples > 0) CHECK(out.params.values != ref.values);
  }
}

TEST_CASE("Phased trains on retain data only in the second half") {
  const auto task = classifier_task(8);
  MetaHyper h;
  h.eta = 0.05;
  h.batch_full = 16;
  SeededRng rng(3);
  const auto t = train(task.spec, task.part, TrainerSettings{}, h, Schedule::constant(TrainerKind::Phased, 4), rng);
  std::size_t early_high = 0;
  for (const auto& row : t.log) {
    if (2 * row.epoch >= 4) {
      CHECK(row.high_risk_examples == 0);
    } else {
      early_high += row.high_risk_examples;
    }
  }
  CHECK(early_high > 0);
}

TEST_CASE("settings validation") {
  TrainerSettings s;
  s.goldfish_p = 1.5;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.clip_norm = 0;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  s = {};
  s.noise_sigma = -1;
  CHECK_THROWS_AS(s.validate(), ParameterError);
  CHECK_NOTHROW(TrainerSettings::neutral().validate());
  CHECK(trainer_kind_from_string("goldfish") == TrainerKind::Goldfish);
  CHECK_THROWS_AS(trainer_kind_from_string("adam"), ValidationError);
  MetaHyper h;
  h.eta = -1;
  CHECK_THROWS_AS(h.validate(), ParameterError);
}
