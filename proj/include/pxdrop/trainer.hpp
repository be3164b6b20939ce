// SPDX-License-Identifier: Apache-2.0
//
// Minibatch SGD on subsampled images, with two optional "dual" objectives that
// additionally push a second view of each image toward the uniform
// distribution.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pxdrop/checkpoint.hpp"
#include "pxdrop/dataset.hpp"
#include "pxdrop/model.hpp"
#include "pxdrop/subsample.hpp"

namespace pxdrop {

enum class Objective {
  Standard,              // CE(subsampled, label)
  DualUniformOriginals,  // + lambda * CE(original, uniform)
  DualUniformNoisy,      // + lambda * CE((X + eps*V) o M, uniform), V in {-1,+1}
};

Objective parse_objective(const std::string& text);
std::string to_string(Objective objective);

// Learning rate `lr` applies from `epoch` (0-based) onward.
struct LrStep {
  int epoch = 0;
  double lr = 0.1;
};

// lr at 0, lr/10 from half the epochs, lr/100 from three quarters.
std::vector<LrStep> default_schedule(int epochs, double base_lr);
double lr_at(std::span<const LrStep> schedule, int epoch);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  std::vector<LrStep> schedule;  // empty -> default_schedule(epochs, base_lr)
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  DropPolicy policy;
  Objective objective = Objective::Standard;
  double noise_eps = 16.0 / 255.0;
  double dual_weight = 1.0;
  std::uint64_t seed = 0;
  // Validation images scored per epoch (0 = all) and masks per image for the
  // drop-0.9 column.
  std::size_t val_limit = 0;
  int val_trials = 1;

  void validate() const;
  std::vector<LrStep> resolved_schedule() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_acc_clean = 0.0;
  double val_acc_drop90 = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

// One training view of a batch: clean images, their masks and labels.
struct TrainBatch {
  Tensor clean;  // [N,3,d,d]
  std::vector<Mask> masks;
  std::vector<int> labels;
  std::vector<std::uint32_t> ids;
};

// Draws each image's rate and mask for `epoch` from the config seed.
TrainBatch make_train_batch(std::span<const ImageRecord* const> records, int side,
                            const TrainConfig& config, int epoch);

// Elementwise +-1 noise for one image, keyed by (seed, id, epoch).
Tensor sign_noise(const Shape& shape, std::uint64_t seed, std::uint32_t id, int epoch);

// Training loss of one batch in train mode. Dual objectives add a second
// forward of the other view with batch statistics (Mode::TrainAux), so
// dual_weight 0 gives the standard loss exactly and the running statistics
// only ever see subsampled inputs.
Tensor objective_loss(const Model& model, const TrainBatch& batch, const TrainConfig& config,
                      int epoch);

// Runs the full schedule. `on_epoch` sees each metrics row as it is produced.
TrainResult train(Model& model, const DatasetSplit& data, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

// Fraction of records classified correctly in eval mode, averaged over
// `n_trials` independent masks per image (drop_rate 0 -> clean, one trial
// suffices).
double evaluate(const Model& model, std::span<const ImageRecord> records, double drop_rate,
                int n_trials, std::uint64_t seed,
                Granularity granularity = Granularity::PerElement, int threads = 1);

// Predicted class per record for one mask draw (`trial`).
std::vector<int> predict(const Model& model, std::span<const ImageRecord> records,
                         double drop_rate, int trial, std::uint64_t seed,
                         Granularity granularity = Granularity::PerElement, int threads = 1);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics);

}  // namespace pxdrop
