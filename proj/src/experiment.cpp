// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/experiment.hpp"

#include <cstdio>
#include <fstream>

#include "pxdrop/attacks.hpp"
#include "pxdrop/checkpoint.hpp"
#include "pxdrop/defense.hpp"
#include "pxdrop/image_io.hpp"
#include "pxdrop/introspect.hpp"
#include "pxdrop/text.hpp"
#include "pxdrop/trainer.hpp"

namespace pxdrop {

namespace {

namespace fs = std::filesystem;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

fs::path prepare_output(const ExperimentConfig& config) {
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "resolved_config.txt", render_experiment(config));
  return config.out_dir;
}

Model load_model(const CommandOptions& options, const ExperimentConfig& config) {
  const fs::path path = options.checkpoint ? *options.checkpoint : config.out_dir / "checkpoint.pxd";
  const Checkpoint ckpt = load_bundle(path);
  if (!ckpt.spec || !(*ckpt.spec == config.model))
    throw ConfigError("checkpoint/spec mismatch: " + path.string() +
                      " was not trained for the configured model and dataset");
  return model_from_checkpoint(ckpt);
}

std::span<const ImageRecord> eval_slice(const DatasetSplit& data, std::size_t limit) {
  std::span<const ImageRecord> test = data.test;
  if (test.empty()) throw ConfigError("dataset has an empty test split");
  return limit > 0 && test.size() > limit ? test.first(limit) : test;
}

}  // namespace

ExperimentConfig resolve_experiment(const CommandOptions& options) {
  ExperimentConfig config = load_experiment(options.config);
  if (options.seed) {
    config.seed = *options.seed;
    config.train.seed = *options.seed;
  }
  if (options.out) config.out_dir = *options.out;
  return config;
}

DatasetSplit load_dataset(const ExperimentConfig& config) {
  if (config.dataset.kind == "cifar10") return load_cifar10(config.dataset.path);
  SynthSignsOptions o;
  o.n_per_class = config.dataset.n_per_class;
  o.num_classes = config.dataset.num_classes;
  o.side = config.dataset.side;
  o.seed = config.seed;
  o.fractions = config.dataset.fractions;
  return synth_signs(o);
}

void cmd_train(const CommandOptions& options) {
  const ExperimentConfig config = resolve_experiment(options);
  const DatasetSplit data = load_dataset(config);
  const fs::path out = prepare_output(config);
  Model model(config.model, config.seed);
  TrainResult result = train(model, data, config.train, [](const EpochMetrics& m) {
    std::printf("epoch %d  loss %.4f  val %.4f  val@0.9 %.4f\n", m.epoch, m.train_loss,
                m.val_acc_clean, m.val_acc_drop90);
    std::fflush(stdout);
  });
  result.checkpoint.metadata["model_id"] = config.model_id;
  save_bundle(result.checkpoint, out / "checkpoint.pxd");
  write_metrics_csv(out / "metrics.csv", result.metrics);
}

void cmd_attack(const CommandOptions& options) {
  const ExperimentConfig config = resolve_experiment(options);
  const DatasetSplit data = load_dataset(config);
  const Model model = load_model(options, config);
  const fs::path out = prepare_output(config);
  const auto records = eval_slice(data, config.eval.limit);
  for (Norm norm : config.eval.norms)
    for (LossKind loss : config.eval.losses)
      for (Goal goal : config.eval.goals) {
        const AttackConfig attack = config.eval.attack(norm, loss, goal, data.side,
                                                       config.eval.eot_drop_rate, config.seed);
        const AdversarialResult adv = attack_records(model, records, attack, options.threads);
        const std::string stem = "adv_" + to_string(norm) + "_" + to_string(loss) + "_" +
                                 to_string(goal);
        export_adversarial(adv, records, attack, out / (stem + ".pxd"), out / (stem + ".csv"));
        std::size_t wins = 0;
        for (bool s : adv.success) wins += s;
        std::printf("%s: %zu/%zu succeeded\n", attack.describe().c_str(), wins, records.size());
      }
}

void cmd_eval(const CommandOptions& options) {
  const ExperimentConfig config = resolve_experiment(options);
  const DatasetSplit data = load_dataset(config);
  const Model model = load_model(options, config);
  const fs::path out = prepare_output(config);
  const auto records = eval_slice(data, config.eval.limit);
  std::span<const ImageRecord> calibration = data.validation;
  if (config.eval.calibration_limit > 0 && calibration.size() > config.eval.calibration_limit)
    calibration = calibration.first(config.eval.calibration_limit);

  const Checkpoint ckpt = load_bundle(options.checkpoint ? *options.checkpoint
                                                         : config.out_dir / "checkpoint.pxd");
  const auto meta = [&](const char* key, const std::string& fallback) {
    const auto it = ckpt.metadata.find(key);
    return it == ckpt.metadata.end() ? fallback : it->second;
  };
  const std::string model_id = meta("model_id", config.model_id);
  const std::string policy = meta("policy", "unknown");

  std::vector<ResultRow> rows;
  for (double rate : config.eval.drop_rates) {
    DefenseConfig defense;
    defense.n_samples = rate > 0.0 ? config.eval.n_samples : 1;
    defense.drop_rate = rate;
    defense.granularity = config.eval.granularity;
    defense.seed = config.seed;

    struct Cell {
      Norm norm;
      LossKind loss;
      Goal goal;
    };
    std::vector<Cell> cells;
    std::vector<AttackConfig> attacks;
    for (Norm norm : config.eval.norms)
      for (LossKind loss : config.eval.losses)
        for (Goal goal : config.eval.goals) {
          cells.push_back({norm, loss, goal});
          attacks.push_back(config.eval.attack(norm, loss, goal, data.side, rate, config.seed));
        }
    const DecisionTable decisions =
        defend_decisions(model, records, attacks, defense, options.threads);

    std::vector<std::optional<double>> thresholds{std::nullopt};
    if (config.eval.reject)
      thresholds.push_back(
          calibrate_threshold(model, calibration, defense, config.eval.fpr, options.threads));

    for (const auto& tau : thresholds) {
      const OutcomeTable table = outcomes_at(decisions, records, tau);
      ResultRow base;
      base.dataset = config.dataset.kind;
      base.model_id = model_id;
      base.train_policy = policy;
      base.drop_rate = rate;
      base.n_samples = defense.n_samples;
      base.threshold = tau;

      ResultRow clean = base;
      clean.norm = "none";
      clean.loss = "none";
      clean.goal = "none";
      clean.report = summarize(table, {});
      rows.push_back(clean);
      for (Norm norm : config.eval.norms) {
        std::vector<std::size_t> best;
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i].norm != norm) continue;
          best.push_back(i);
          ResultRow row = base;
          row.norm = to_string(norm);
          row.eps = attacks[i].eps;
          row.loss = to_string(cells[i].loss);
          row.goal = to_string(cells[i].goal);
          row.eot = attacks[i].eot_samples;
          const std::size_t one[1] = {i};
          row.report = summarize(table, one);
          rows.push_back(row);
        }
        if (best.size() > 1) {
          ResultRow row = base;
          row.norm = to_string(norm);
          row.eps = attacks[best.front()].eps;
          row.loss = "best";
          row.goal = "best";
          row.eot = attacks[best.front()].eot_samples;
          row.report = summarize(table, best);
          rows.push_back(row);
        }
      }
    }
    std::printf("drop rate %s done\n", format_number(rate).c_str());
    std::fflush(stdout);
  }
  const fs::path results = out / "results.csv";
  fs::remove(results);
  append_results_csv(results, rows);
}

void cmd_explain(const CommandOptions& options) {
  const ExperimentConfig config = resolve_experiment(options);
  const DatasetSplit data = load_dataset(config);
  const Model model = load_model(options, config);
  const fs::path dir = prepare_output(config) / "explain";
  fs::create_directories(dir);
  const auto records = eval_slice(data, config.explain.count);
  const int side = data.side;
  const Shape image{3, static_cast<std::size_t>(side), static_cast<std::size_t>(side)};

  std::ofstream csv(dir / "explain_summary.csv", std::ios::binary);
  csv << "image_id,label,class_index,dropped_fraction\n";
  for (const auto& r : records) {
    const Tensor x(image, r.pixels);
    const Mask mask = sample_mask(image, config.explain.drop_rate, config.eval.granularity,
                                  {config.seed, Stream::EvalMask, r.id, 0, 0});
    const Tensor xs = apply_mask(x, mask);
    const ExplanationMap map = explanation_map(model, xs, config.explain.target, r.label);
    const MaskSplit split = mask_split(map, mask);
    const std::string id = std::to_string(r.id);
    write_pnm(dir / ("image_" + id + ".ppm"), planar_to_rgb(x.data(), side, side));
    write_pnm(dir / ("subsampled_" + id + ".ppm"), planar_to_rgb(xs.data(), side, side));
    write_pnm(dir / ("map_" + id + ".pgm"), map_to_gray(map.values.data(), side, side));
    write_pnm(dir / ("kept_" + id + ".pgm"), map_to_gray(split.kept.data(), side, side));
    write_pnm(dir / ("dropped_" + id + ".pgm"), map_to_gray(split.dropped.data(), side, side));
    csv << r.id << ',' << r.label << ',' << map.class_index << ','
        << format_number(split.dropped_fraction) << '\n';
  }
  if (!csv) throw Error("failed writing explain_summary.csv");
}

void cmd_filters(const CommandOptions& options) {
  const ExperimentConfig config = resolve_experiment(options);
  const fs::path path =
      options.checkpoint ? *options.checkpoint : config.out_dir / "checkpoint.pxd";
  const Checkpoint ckpt = load_bundle(path);
  const fs::path dir = prepare_output(config) / "filters";
  write_filters(export_filters(ckpt), dir);
}

}  // namespace pxdrop
