// r2u: command-line front end for experiments and token reports.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>

#include "r2u/error.hpp"
#include "r2u/experiment.hpp"
#include "r2u/metrics.hpp"
#include "r2u/report.hpp"

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw r2u::InputError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed,
            std::optional<std::string> out) {
  auto cfg = r2u::load_config(config);
  if (seed) {
    cfg.seed = *seed;
    cfg.meta.seed = *seed;
  }
  if (out) cfg.output_dir = *out;
  const auto a = r2u::run_experiment(cfg);
  std::cout << "config:     " << a.config_echo.string() << '\n';
  std::cout << "metrics:    " << a.metrics_csv.string() << '\n';
  if (!a.trajectory_csv.empty()) std::cout << "trajectory: " << a.trajectory_csv.string() << '\n';
  if (!a.summary_csv.empty()) std::cout << "summary:    " << a.summary_csv.string() << '\n';
  if (a.token_report_json) std::cout << "tokens:     " << a.token_report_json->string() << '\n';
  for (const auto& s : a.snapshots) std::cout << "snapshot:   " << s.string() << '\n';
  return 0;
}

int cmd_sweep(const std::string& config) {
  const auto cfg = r2u::load_config(config);
  const auto rows = r2u::run_duration_sweep(cfg);
  std::vector<double> m;
  std::vector<double> steps;
  for (const auto& r : rows) {
    std::cout << "M=" << r.m << " steps="
              << (r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : "-") << '\n';
    if (!r.steps_to_threshold) continue;
    m.push_back(static_cast<double>(r.m));
    steps.push_back(static_cast<double>(*r.steps_to_threshold));
  }
  if (m.size() >= 2) std::cout << "spearman(M, steps) = " << r2u::spearman(m, steps) << '\n';
  std::cout << "wrote " << (cfg.output_dir / "sweep.csv").string() << '\n';
  return 0;
}

int cmd_token_report(const std::string& model, const std::string& text_path,
                     std::optional<std::string> out) {
  const auto snap = r2u::read_snapshot(model);
  if (snap.params.spec.kind != r2u::ModelKind::CharLM || !snap.vocab) {
    throw r2u::InputError("token-report needs a character language model snapshot");
  }
  const auto text = slurp(text_path);
  const auto json = r2u::render_token_report(r2u::token_report(snap.params, *snap.vocab, text));
  if (out) {
    r2u::write_text(*out, json);
  } else {
    std::cout << json;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ready2Unlearn experiments"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  auto* run = app.add_subcommand("run", "train, unlearn and (for resistance) recover");
  run->add_option("--config", config, "JSON experiment config")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out, "override the output directory");

  std::string sweep_config;
  auto* sweep = app.add_subcommand("sweep", "preparation-duration sweep");
  sweep->add_option("--config", sweep_config, "JSON experiment config")->required();

  std::string model;
  std::string text;
  std::optional<std::string> report_out;
  auto* tokens = app.add_subcommand("token-report", "per-token loss of a CharLM snapshot");
  tokens->add_option("--model", model, "R2U1 snapshot")->required();
  tokens->add_option("--text", text, "text file")->required();
  tokens->add_option("--out", report_out, "write JSON here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, seed, out);
    if (*sweep) return cmd_sweep(sweep_config);
    if (*tokens) return cmd_token_report(model, text, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
