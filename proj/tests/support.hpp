#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "r2u/dataset.hpp"
#include "r2u/model.hpp"

namespace r2u::test {

inline ParamState quad(double theta, ParamRole role = ParamRole::Initial) {
  return make_params(ModelSpec::quadratic(), {theta}, role);
}

inline Example qx(double x, RiskTag tag = RiskTag::LowRisk) {
  Example e;
  e.input = {x};
  e.tag = tag;
  return e;
}

inline LabeledDataset qset(std::vector<double> xs, RiskTag tag = RiskTag::LowRisk,
                           std::string id = "quad") {
  std::vector<Example> ex;
  for (double x : xs) ex.push_back(qx(x, tag));
  return LabeledDataset::from_examples(std::move(id), 1, std::move(ex));
}

// Hand-written closed form of the QUAD loss.
inline double qloss(double theta, double x) { return 0.5 * (theta - x) * (theta - x); }

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("r2u_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace r2u::test
