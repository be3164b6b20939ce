// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pxdrop/ops.hpp"
#include "pxdrop/optim.hpp"
#include "pxdrop/parallel.hpp"
#include "pxdrop/text.hpp"

namespace pxdrop {

namespace {

constexpr std::size_t kEvalChunk = 128;

std::vector<const ImageRecord*> pointers(std::span<const ImageRecord> records) {
  std::vector<const ImageRecord*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r);
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng({seed, Stream::Shuffle, 0, static_cast<std::uint32_t>(epoch), 0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

Objective parse_objective(const std::string& text) {
  if (text == "standard") return Objective::Standard;
  if (text == "dual_originals") return Objective::DualUniformOriginals;
  if (text == "dual_noisy") return Objective::DualUniformNoisy;
  throw ConfigError("unknown objective '" + text +
                    "' (expected standard|dual_originals|dual_noisy)");
}

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::Standard:
      return "standard";
    case Objective::DualUniformOriginals:
      return "dual_originals";
    case Objective::DualUniformNoisy:
      return "dual_noisy";
  }
  return "standard";
}

std::vector<LrStep> default_schedule(int epochs, double base_lr) {
  std::vector<LrStep> steps{{0, base_lr}};
  const int half = epochs / 2, three_quarters = (3 * epochs) / 4;
  if (half > 0) steps.push_back({half, base_lr / 10});
  if (three_quarters > half) steps.push_back({three_quarters, base_lr / 100});
  return steps;
}

double lr_at(std::span<const LrStep> schedule, int epoch) {
  double lr = schedule.empty() ? 0.0 : schedule.front().lr;
  for (const auto& step : schedule)
    if (step.epoch <= epoch) lr = step.lr;
  return lr;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(dual_weight > 0.0)) throw ConfigError("train: dual weight must be > 0");
  if (!(noise_eps > 0.0 && noise_eps <= 1.0))
    throw ConfigError("train: noise eps must lie in (0, 1]");
  if (val_trials < 1) throw ConfigError("train: val_trials must be >= 1");
  for (std::size_t i = 1; i < schedule.size(); ++i)
    if (schedule[i].epoch <= schedule[i - 1].epoch)
      throw ConfigError("train: schedule epochs must be increasing");
  for (const auto& step : schedule)
    if (!(step.lr > 0.0)) throw ConfigError("train: learning rates must be positive");
  policy.validate();
}

std::vector<LrStep> TrainConfig::resolved_schedule() const {
  return schedule.empty() ? default_schedule(epochs, base_lr) : schedule;
}

Tensor sign_noise(const Shape& shape, std::uint64_t seed, std::uint32_t id, int epoch) {
  CounterRng rng({seed, Stream::TrainNoise, id, static_cast<std::uint32_t>(epoch), 0});
  std::vector<float> v(shape_numel(shape));
  std::uint32_t bits = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i % 32 == 0) bits = rng.next_u32();
    v[i] = (bits >> (i % 32)) & 1u ? 1.0f : -1.0f;
  }
  return Tensor(shape, std::move(v));
}

TrainBatch make_train_batch(std::span<const ImageRecord* const> records, int side,
                            const TrainConfig& config, int epoch) {
  TrainBatch batch;
  batch.clean = stack_images(records, side);
  const Shape image{3, static_cast<std::size_t>(side), static_cast<std::size_t>(side)};
  const auto round = static_cast<std::uint32_t>(epoch);
  for (const ImageRecord* r : records) {
    CounterRng rate_rng({config.seed, Stream::TrainRate, r->id, round, 0});
    const double rate = draw_rate(config.policy, rate_rng);
    batch.masks.push_back(sample_mask(image, rate, config.policy.granularity,
                                      {config.seed, Stream::TrainMask, r->id, round, 0}));
    batch.labels.push_back(r->label);
    batch.ids.push_back(r->id);
  }
  return batch;
}

Tensor objective_loss(const Model& model, const TrainBatch& batch, const TrainConfig& config,
                      int epoch) {
  const Tensor masks = stack_masks(batch.masks);
  const Tensor subsampled = mul(batch.clean, masks);
  const Tensor loss = cross_entropy(model.forward(subsampled, Mode::Train), batch.labels);
  if (config.objective == Objective::Standard) return loss;

  Tensor twin;
  if (config.objective == Objective::DualUniformOriginals) {
    twin = batch.clean;
  } else {
    const Shape image(batch.clean.shape().begin() + 1, batch.clean.shape().end());
    std::vector<float> noise;
    noise.reserve(batch.clean.numel());
    for (std::uint32_t id : batch.ids) {
      const Tensor v = sign_noise(image, config.seed, id, epoch);
      noise.insert(noise.end(), v.values().begin(), v.values().end());
    }
    const Tensor v(batch.clean.shape(), std::move(noise));
    twin = mul(add(batch.clean, scale(v, static_cast<float>(config.noise_eps))), masks);
  }
  const std::size_t classes = static_cast<std::size_t>(model.spec().num_classes);
  const Tensor uniform = Tensor::full({classes}, 1.0f / static_cast<float>(classes));
  const Tensor spread = cross_entropy(model.forward(twin, Mode::TrainAux), uniform);
  return add(loss, scale(spread, static_cast<float>(config.dual_weight)));
}

std::vector<int> predict(const Model& model, std::span<const ImageRecord> records,
                         double drop_rate, int trial, std::uint64_t seed,
                         Granularity granularity, int threads) {
  if (records.empty()) throw Error("predict: no records");
  const int side = model.spec().input_side;
  const Shape image{3, static_cast<std::size_t>(side), static_cast<std::size_t>(side)};
  std::vector<int> out(records.size());
  const std::size_t chunks = (records.size() + kEvalChunk - 1) / kEvalChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kEvalChunk;
    const std::size_t end = std::min(records.size(), begin + kEvalChunk);
    const auto slice = records.subspan(begin, end - begin);
    Tensor batch = stack_images(slice, side);
    if (drop_rate > 0.0) {
      std::vector<Mask> masks;
      masks.reserve(slice.size());
      for (const auto& r : slice)
        masks.push_back(sample_mask(image, drop_rate, granularity,
                                    {seed, Stream::EvalMask, r.id, 0,
                                     static_cast<std::uint32_t>(trial)}));
      batch = apply_masks(batch, masks);
    }
    const Tensor logits = model.forward(batch, Mode::Eval, false);
    const std::size_t classes = logits.size(1);
    for (std::size_t i = 0; i < slice.size(); ++i) {
      const float* row = logits.data() + i * classes;
      out[begin + i] = static_cast<int>(std::max_element(row, row + classes) - row);
    }
  });
  return out;
}

double evaluate(const Model& model, std::span<const ImageRecord> records, double drop_rate,
                int n_trials, std::uint64_t seed, Granularity granularity, int threads) {
  if (records.empty()) throw Error("evaluate: no records");
  if (n_trials < 1) throw ConfigError("evaluate: n_trials must be >= 1");
  if (drop_rate == 0.0) n_trials = 1;
  std::size_t correct = 0;
  for (int t = 0; t < n_trials; ++t) {
    const auto pred = predict(model, records, drop_rate, t, seed, granularity, threads);
    for (std::size_t i = 0; i < records.size(); ++i) correct += pred[i] == records[i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size() * n_trials);
}

TrainResult train(Model& model, const DatasetSplit& data, const TrainConfig& config,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  const ModelSpec& spec = model.spec();
  if (data.num_classes != spec.num_classes || data.side != spec.input_side)
    throw ConfigError("train: dataset has " + std::to_string(data.num_classes) +
                      " classes at side " + std::to_string(data.side) + ", model expects " +
                      std::to_string(spec.num_classes) + " at side " +
                      std::to_string(spec.input_side));
  if (data.train.empty()) throw ConfigError("train: empty training set");

  const auto schedule = config.resolved_schedule();
  SgdMomentum<float> optimizer(model.parameters(), static_cast<float>(config.momentum),
                               static_cast<float>(config.weight_decay));
  std::span<const ImageRecord> val = data.validation;
  if (config.val_limit > 0 && val.size() > config.val_limit) val = val.first(config.val_limit);

  TrainResult result;
  const auto all = pointers(data.train);
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const float lr = static_cast<float>(lr_at(schedule, epoch));
    const auto order = epoch_order(all.size(), config.seed, epoch);
    double loss_total = 0.0;
    std::size_t batch_id = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += bs, ++batch_id) {
      const std::size_t end = std::min(order.size(), begin + bs);
      std::vector<const ImageRecord*> members;
      members.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) members.push_back(all[order[i]]);
      try {
        const TrainBatch batch = make_train_batch(members, data.side, config, epoch);
        optimizer.zero_grad();
        const Tensor loss = objective_loss(model, batch, config, epoch);
        loss_total += static_cast<double>(loss.item()) * static_cast<double>(members.size());
        loss.backward();
        optimizer.step(lr);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(batch_id) + " (first image id " +
                           std::to_string(members.front()->id) + "): " + e.what());
      }
    }
    EpochMetrics row;
    row.epoch = epoch + 1;
    row.train_loss = loss_total / static_cast<double>(order.size());
    if (!val.empty()) {
      try {
        row.val_acc_clean = evaluate(model, val, 0.0, 1, config.seed);
        row.val_acc_drop90 =
            evaluate(model, val, 0.9, config.val_trials, config.seed, config.policy.granularity);
      } catch (const NumericError& e) {
        // The last update of the epoch can blow up the weights unseen.
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " (validation after the last batch): " + e.what());
      }
    }
    result.metrics.push_back(row);
    if (on_epoch) on_epoch(row);
  }

  result.checkpoint = make_checkpoint(
      model, {{"epochs", std::to_string(config.epochs)},
              {"batch_size", std::to_string(config.batch_size)},
              {"base_lr", format_number(config.base_lr)},
              {"policy", config.policy.describe()},
              {"objective", to_string(config.objective)},
              {"seed", std::to_string(config.seed)}});
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_acc_clean,val_acc_drop90\n";
  for (const auto& m : metrics)
    out << m.epoch << ',' << format_number(m.train_loss) << ',' << format_number(m.val_acc_clean)
        << ',' << format_number(m.val_acc_drop90) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace pxdrop
