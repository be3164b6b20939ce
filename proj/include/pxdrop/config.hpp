// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: a flat text file of `dotted.key = value` lines,
// `#` starting a comment. Lists are comma separated; numbers may be written
// as a/b fractions (e.g. 16/255).
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pxdrop/attacks.hpp"
#include "pxdrop/introspect.hpp"
#include "pxdrop/model.hpp"
#include "pxdrop/subsample.hpp"
#include "pxdrop/trainer.hpp"

namespace pxdrop {

struct DatasetConfig {
  std::string kind = "synth";  // synth | cifar10
  std::filesystem::path path;  // cifar10 directory
  int n_per_class = 500;
  int num_classes = 8;
  int side = 32;
  std::array<double, 3> fractions{0.6, 0.2, 0.2};
};

// Overrides of the preset for one norm; unset fields keep the preset value.
struct NormOverride {
  std::optional<double> eps, step;
  std::optional<int> iterations;
};

struct EvalConfig {
  std::string preset = "cifar10";
  std::vector<Norm> norms{Norm::L0, Norm::L2, Norm::Linf};
  std::vector<LossKind> losses{LossKind::CrossEntropy, LossKind::CW};
  std::vector<Goal> goals{Goal::Misclassify, Goal::Targeted};
  int target = -1;
  int eot_samples = 10;
  double eot_drop_rate = 0.9;  // cmd_attack only; cmd_eval follows each drop rate
  bool random_start = false;
  std::map<Norm, NormOverride> overrides;

  std::vector<double> drop_rates{0.0, 0.5, 0.9};
  int n_samples = 10;
  Granularity granularity = Granularity::PerElement;
  bool reject = true;
  double fpr = 0.01;
  std::size_t calibration_limit = 0;  // 0 = whole validation split
  std::size_t limit = 100;            // test images attacked / evaluated

  // Attack for one grid cell; eot follows `drop_rate` (none at 0).
  AttackConfig attack(Norm norm, LossKind loss, Goal goal, int side, double drop_rate,
                      std::uint64_t seed) const;
};

struct ExplainConfig {
  std::size_t count = 8;
  MapTarget target = MapTarget::PredictedLogit;
  double drop_rate = 0.9;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "out";
  DatasetConfig dataset;
  ModelSpec model;  // num_classes and input_side follow the dataset
  std::string model_id = "model";
  TrainConfig train;
  EvalConfig eval;
  ExplainConfig explain;
};

// Parses config text. Every problem (unknown key, bad value, duplicate,
// missing seed, missing dataset path) is collected and reported together in
// one ConfigError.
ExperimentConfig parse_experiment(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Fully resolved config in the same format; parsing it yields the same
// configuration.
std::string render_experiment(const ExperimentConfig& config);

// Number with optional a/b fraction form.
double parse_number(const std::string& text);

}  // namespace pxdrop
