#include <doctest.h>

#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "r2u/error.hpp"
#include "r2u/experiment.hpp"
#include "r2u/report.hpp"
#include "support.hpp"

using namespace r2u;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

json with(json j, const std::string& key, json value) {
  j[key] = std::move(value);
  return j;
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  std::string l;
  while (std::getline(s, l)) out.push_back(l);
  return out;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::string c;
  std::stringstream s(line);
  while (std::getline(s, c, ',')) out.push_back(c);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

json small_class_wise(const std::filesystem::path& out) {
  return with(json::parse(R"({
    "task": "class_wise", "seed": 3,
    "dataset": {"source": "synth_blobs", "classes": 3, "per_class": 20, "dim": 4, "separation": 4},
    "model": {"hidden": [6]},
    "trainer": {"kind": "ready2unlearn", "epochs": 2, "prepared_epochs": 1, "settings": {"learning_rate": 0.05}},
    "meta": {"eta": 0.01, "lambda1": 2, "lambda2": 0, "lambda3": 4, "batch_full": 16},
    "unlearn": {"rate": 0.05, "max_steps": 6, "stop": {"kind": "none"}}
  })"),
              "output_dir", out.string());
}

std::string validation_message(const std::string& text) {
  try {
    parse_config(text).validate();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "<valid>";
}

}  // namespace

TEST_CASE("config: required lambdas, unknown keys, bad values") {
  auto j = small_class_wise("unused");
  j["meta"].erase("lambda1");
  const auto msg = validation_message(j.dump());
  CHECK(msg.find("lambda1") != std::string::npos);

  j = small_class_wise("unused");
  j["meta"]["lamda2"] = 1;
  CHECK(validation_message(j.dump()).find("meta.lamda2") != std::string::npos);

  j = small_class_wise("unused");
  j["trainer"]["prepared_epochs"] = 5;
  CHECK(validation_message(j.dump()).find("trainer.prepared_epochs") != std::string::npos);

  j = small_class_wise("unused");
  j["task"] = "duration_sweep";
  j["sweep"] = {{"m_values", {1, 3}}};
  CHECK(validation_message(j.dump()).find("sweep.m_values") != std::string::npos);

  j = small_class_wise("unused");
  j["unlearn"]["rate"] = -1;
  CHECK(validation_message(j.dump()).find("unlearn") != std::string::npos);

  j = small_class_wise("unused");
  j["dataset"] = {{"source", "idx"}, {"images", "/nonexistent/i"}, {"labels", "/nonexistent/l"}};
  CHECK(validation_message(j.dump()).find("dataset.images") != std::string::npos);

  j = small_class_wise("unused");
  j["dataset"] = {{"source", "styled_corpus"}};
  CHECK(validation_message(j.dump()).find("task") != std::string::npos);

  j = small_class_wise("unused");
  j["trainer"]["kind"] = "adamw";
  CHECK(validation_message(j.dump()).find("trainer.kind") != std::string::npos);

  CHECK(validation_message("{not json").find("JSON") != std::string::npos);
  CHECK(validation_message(small_class_wise("unused").dump()) == "<valid>");
}

TEST_CASE("config: resolved echo re-parses to itself") {
  auto j = small_class_wise("echo");
  j["trainer"]["settings"]["clip_norm"] = "inf";
  const auto cfg = parse_config(j.dump());
  const auto echo = resolved_config_json(cfg);
  CHECK(resolved_config_json(parse_config(echo)) == echo);
  const auto e = json::parse(echo);
  CHECK(e["meta"]["alpha"] == 1e-5);
  CHECK(e["trainer"]["settings"]["clip_norm"] == "inf");
  CHECK(e["trainer"]["settings"]["goldfish_p"] == 0.25);
  CHECK(cfg.unlearn.run.minibatch == std::nullopt);

  auto lm = small_class_wise("echo");
  lm["task"] = "resistance";
  lm["dataset"] = {{"source", "styled_corpus"}};
  lm.erase("model");
  const auto lm_cfg = parse_config(lm.dump());
  CHECK(lm_cfg.unlearn.run.minibatch == std::optional<std::size_t>(32));
  CHECK(lm_cfg.model.context == 16);
  CHECK(lm_cfg.model.hidden == std::vector<std::size_t>{256});
  const auto lm_echo = resolved_config_json(lm_cfg);
  CHECK(resolved_config_json(parse_config(lm_echo)) == lm_echo);
  lm["unlearn"]["minibatch"] = nullptr;
  const auto full = parse_config(lm.dump());
  CHECK_FALSE(full.unlearn.run.minibatch);
  CHECK(resolved_config_json(parse_config(resolved_config_json(full))) == resolved_config_json(full));
}

TEST_CASE("class_wise run: schema, one row per class and step, determinism") {
  const auto dir = test::scratch_dir("cw");
  const auto cfg = parse_config(small_class_wise(dir / "out").dump());
  const auto a = run_experiment(cfg);
  const auto metrics = slurp(a.metrics_csv);
  const auto ml = lines(metrics);
  CHECK(ml[0] == "forget,step,epoch,phase,forget_loss,forget_acc,retain_acc,recovery_loss");
  std::map<std::string, std::map<std::string, int>> per;
  for (std::size_t i = 1; i < ml.size(); ++i) {
    const auto c = cells(ml[i]);
    REQUIRE(c.size() == 8);
    ++per[c[0]][c[3]];
  }
  CHECK(per.size() == 3);
  const int learn_steps = 2 * ((60 + 15) / 16);
  for (const auto& [cls, phases] : per) {
    CHECK(phases.at("learning") == learn_steps);
    CHECK(phases.at("unlearning") == 6);
    CHECK_FALSE(phases.count("recovery"));
  }
  CHECK(std::filesystem::exists(a.config_echo));
  CHECK(a.snapshots.size() == 6);
  for (const auto& s : a.snapshots) CHECK(std::filesystem::exists(s));
  CHECK_FALSE(a.token_report_json);

  const auto traj = slurp(a.trajectory_csv);
  const auto summary = slurp(a.summary_csv);
  const auto snap = slurp(a.snapshots.back());
  run_experiment(cfg);
  CHECK(slurp(a.metrics_csv) == metrics);
  CHECK(slurp(a.trajectory_csv) == traj);
  CHECK(slurp(a.summary_csv) == summary);
  CHECK(slurp(a.snapshots.back()) == snap);
}

TEST_CASE("class_wise aggregation is the per-step mean of per-class trajectories") {
  const auto dir = test::scratch_dir("agg");
  auto j = small_class_wise(dir / "out");
  // Early stops give the classes different lengths.
  j["unlearn"]["stop"] = {{"kind", "forget_loss_at_least"}, {"threshold", 2.5}};
  j["unlearn"]["max_steps"] = 40;
  j["unlearn"]["rate"] = 0.2;
  const auto a = run_experiment(parse_config(j.dump()));

  std::map<std::string, std::vector<std::vector<std::string>>> per;
  const auto ml = lines(slurp(a.metrics_csv));
  for (std::size_t i = 1; i < ml.size(); ++i) {
    auto c = cells(ml[i]);
    if (c[3] == "unlearning") per[c[0]].push_back(c);
  }
  // A class that meets the stop at entry has no unlearning rows; it enters
  // the mean with its pre-unlearning state.
  const auto sl = lines(slurp(a.summary_csv));
  for (std::size_t i = 1; i + 1 < sl.size(); ++i) {
    const auto c = cells(sl[i]);
    if (!per.count(c[0])) per[c[0]].push_back({c[0], "0", "", "unlearning", c[1], c[2], c[3], ""});
  }
  CHECK(per.size() == 3);
  std::size_t longest = 0;
  for (const auto& [k, rows] : per) longest = std::max(longest, rows.size());

  std::vector<std::vector<std::string>> agg;
  for (const auto& l : lines(slurp(a.trajectory_csv))) {
    auto c = cells(l);
    if (c.size() > 2 && c[2] == "unlearning") agg.push_back(c);
  }
  REQUIRE(agg.size() == longest);
  for (std::size_t s = 0; s < longest; ++s) {
    double loss = 0, acc = 0, retain = 0;
    for (const auto& [k, rows] : per) {
      REQUIRE_FALSE(rows.empty());
      const auto& r = rows[std::min(s, rows.size() - 1)];
      loss += std::stod(r[4]);
      acc += std::stod(r[5]);
      retain += std::stod(r[6]);
    }
    const double n = static_cast<double>(per.size());
    CHECK(std::stod(agg[s][3]) == doctest::Approx(loss / n).epsilon(1e-8));
    CHECK(std::stod(agg[s][4]) == doctest::Approx(acc / n).epsilon(1e-8));
    CHECK(std::stod(agg[s][5]) == doctest::Approx(retain / n).epsilon(1e-8));
  }
}

TEST_CASE("resistance run on the styled corpus writes all artifacts") {
  const auto dir = test::scratch_dir("res");
  const auto j = with(json::parse(R"({
    "task": "resistance", "seed": 1,
    "dataset": {"source": "styled_corpus", "lines_per_text": 4},
    "model": {"context": 3, "embed_dim": 4, "lm_hidden": 8},
    "trainer": {"kind": "ready2unlearn", "epochs": 2},
    "meta": {"eta": 0.05, "lambda1": 0, "lambda2": 3, "lambda3": 4},
    "unlearn": {"rate": 0.05, "max_steps": 5, "stop": {"kind": "none"}},
    "recovery": {"rate": 0.05, "steps": 4}
  })"),
                      "output_dir", (dir / "out").string());
  const auto a = run_experiment(parse_config(j.dump()));
  REQUIRE(a.token_report_json);
  const auto rep = json::parse(slurp(*a.token_report_json));
  CHECK(rep["tokens"].size() > 0);
  CHECK(rep["summary"]["filler_mean_loss"].is_number());
  const auto ml = lines(slurp(a.metrics_csv));
  int recovery_rows = 0;
  for (const auto& l : ml) recovery_rows += l.find(",recovery,") != std::string::npos ? 1 : 0;
  CHECK(recovery_rows == 4);
  const auto sl = lines(slurp(a.summary_csv));
  REQUIRE(sl.size() == 2);
  CHECK(cells(sl[1])[0] == "styled");
  CHECK_FALSE(cells(sl[1])[8].empty());
}

TEST_CASE("random_data run") {
  const auto dir = test::scratch_dir("rnd");
  auto j = small_class_wise(dir / "out");
  j["task"] = "random_data";
  j["dataset"]["fractions"] = {{"forget", 0.2}, {"recovery", 0.0}, {"recovery_finetune", 0.0}};
  const auto a = run_experiment(parse_config(j.dump()));
  const auto sl = lines(slurp(a.summary_csv));
  REQUIRE(sl.size() == 2);
  CHECK(cells(sl[1])[0] == "random");
}

TEST_CASE("failed runs leave no partial files") {
  const auto dir = test::scratch_dir("fail");
  write_text(dir / "tiny.txt", "ab");
  auto j = json::parse(R"({
    "task": "random_data",
    "model": {"context": 4},
    "meta": {"lambda1": 2, "lambda2": 0, "lambda3": 4}
  })");
  j["output_dir"] = (dir / "out").string();
  j["dataset"] = {{"source", "corpus"}, {"corpus", (dir / "tiny.txt").string()}};
  CHECK_THROWS_AS(run_experiment(parse_config(j.dump())), InputError);
  CHECK_FALSE(std::filesystem::exists(dir / "out"));

  // A pre-existing directory survives, but the run's files do not.
  std::filesystem::create_directories(dir / "keep");
  write_text(dir / "keep" / "mine.txt", "x");
  auto k = j;
  k["output_dir"] = (dir / "keep").string();
  CHECK_THROWS(run_experiment(parse_config(k.dump())));
  CHECK(std::filesystem::exists(dir / "keep" / "mine.txt"));
  CHECK_FALSE(std::filesystem::exists(dir / "keep" / "resolved_config.json"));
}

TEST_CASE("duration sweep: rows, M = 0 anchor, M = E, M > E rejected") {
  const auto dir = test::scratch_dir("sweep");
  auto j = small_class_wise(dir / "out");
  j["task"] = "duration_sweep";
  j["trainer"].erase("prepared_epochs");
  j["sweep"] = {{"m_values", {0, 1, 2}}, {"threshold", 0.5}};
  j["unlearn"]["max_steps"] = 50;
  auto cfg = parse_config(j.dump());
  const auto rows = run_duration_sweep(cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].m == 0);
  CHECK(rows[2].m == 2);
  const auto sl = lines(slurp(dir / "out" / "sweep.csv"));
  CHECK(sl[0] == "m,steps_to_threshold,pre_forget_acc");
  CHECK(sl.size() == 4);

  cfg.sweep.parallel = true;
  const auto par = run_duration_sweep(cfg);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(par[i].steps_to_threshold == rows[i].steps_to_threshold);
    CHECK(par[i].pre_forget_acc == rows[i].pre_forget_acc);
  }

  cfg.sweep.m_values = {2};
  cfg.sweep.parallel = false;
  CHECK(run_duration_sweep(cfg).size() == 1);

  cfg.sweep.m_values = {3};
  CHECK_THROWS_AS(run_duration_sweep(cfg), ValidationError);

  const auto def = parse_config(R"({"task": "duration_sweep", "meta": {"lambda1": 2, "lambda2": 0, "lambda3": 4}})");
  CHECK(def.sweep.m_values == std::vector<std::size_t>{2, 4, 6, 8, 10, 12, 14, 16, 18, 20});
  CHECK(def.trainer.epochs == 20);
}
