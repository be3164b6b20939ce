// SPDX-License-Identifier: Apache-2.0
//
// The command implementations behind the pxdrop CLI. Each command writes its
// artifacts plus resolved_config.txt into the output directory.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "pxdrop/config.hpp"
#include "pxdrop/dataset.hpp"

namespace pxdrop {

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> out;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

// Config file with the command-line overrides applied.
ExperimentConfig resolve_experiment(const CommandOptions& options);

DatasetSplit load_dataset(const ExperimentConfig& config);

// Trains and writes checkpoint.pxd and metrics.csv.
void cmd_train(const CommandOptions& options);

// Attacks the first eval.limit test images with every configured
// norm/loss/goal; writes adv_<norm>_<loss>_<goal>.pxd and .csv.
void cmd_attack(const CommandOptions& options);

// Sweeps drop rates x norms x (loss, goal) with and without rejection and
// writes results.csv.
void cmd_eval(const CommandOptions& options);

// Explanation maps of subsampled test images (explain/ subdirectory).
void cmd_explain(const CommandOptions& options);

// First-layer filter images and filters_summary.csv (filters/ subdirectory).
void cmd_filters(const CommandOptions& options);

}  // namespace pxdrop
