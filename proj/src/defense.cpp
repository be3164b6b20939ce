// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/defense.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pxdrop/parallel.hpp"
#include "pxdrop/text.hpp"

namespace pxdrop {

namespace {

constexpr std::size_t kEnsembleChunk = 128;

}  // namespace

void DefenseConfig::validate(int num_classes) const {
  if (n_samples < 1) throw ConfigError("defense: n_samples must be >= 1");
  if (!(drop_rate >= 0.0 && drop_rate <= 1.0))
    throw ConfigError("defense: drop rate must lie in [0, 1]");
  if (threshold && !(*threshold >= 0.0 && *threshold <= std::log(double(num_classes)) + 1e-12))
    throw ConfigError("defense: threshold must lie in [0, ln C]");
}

double entropy(std::span<const double> p) {
  double total = 0.0;
  for (double v : p) {
    if (v < 0.0 || !std::isfinite(v))
      throw Error("entropy: probability entries must be finite and non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw Error("entropy: probability vector sums to zero");
  double h = 0.0;
  for (double v : p) {
    const double q = v / total;
    if (q > 0.0) h -= q * std::log(q);
  }
  return std::max(h, 0.0);
}

EnsembleDecision decide(std::vector<double> mean_prob, std::optional<double> threshold) {
  EnsembleDecision d;
  d.entropy = entropy(mean_prob);
  d.label = static_cast<int>(std::max_element(mean_prob.begin(), mean_prob.end()) -
                             mean_prob.begin());
  d.accepted = !threshold || d.entropy <= *threshold;
  d.mean_prob = std::move(mean_prob);
  return d;
}

std::vector<EnsembleDecision> ensemble_predict(const Model& model, const Tensor& batch,
                                               std::span<const std::uint32_t> ids,
                                               const DefenseConfig& config, int threads) {
  const int classes = model.spec().num_classes;
  config.validate(classes);
  if (batch.dim() != 4 || ids.size() != batch.size(0))
    throw ShapeError("ensemble_predict: batch " + shape_str(batch.shape()) + " with " +
                     std::to_string(ids.size()) + " ids");
  const std::size_t n = batch.size(0), per = batch.numel() / std::max<std::size_t>(n, 1);
  const std::size_t c = static_cast<std::size_t>(classes);
  const Shape image(batch.shape().begin() + 1, batch.shape().end());
  std::vector<std::vector<double>> prob(n, std::vector<double>(c, 0.0));

  const std::size_t chunks = (n + kEnsembleChunk - 1) / kEnsembleChunk;
  parallel_for(chunks, threads, [&](std::size_t chunk) {
    const std::size_t begin = chunk * kEnsembleChunk;
    const std::size_t count = std::min(kEnsembleChunk, n - begin);
    Shape shape = batch.shape();
    shape[0] = count;
    const auto src = batch.values().subspan(begin * per, count * per);
    const Tensor part(shape, std::vector<float>(src.begin(), src.end()));
    for (int s = 0; s < config.n_samples; ++s) {
      Tensor input = part;
      if (config.drop_rate > 0.0) {
        std::vector<Mask> masks;
        masks.reserve(count);
        for (std::size_t i = 0; i < count; ++i)
          masks.push_back(sample_mask(image, config.drop_rate, config.granularity,
                                      {config.seed, Stream::EvalMask, ids[begin + i], 0,
                                       static_cast<std::uint32_t>(s)}));
        input = apply_masks(part, masks);
      }
      const Tensor logits = model.forward(input, Mode::Eval, false);
      for (std::size_t i = 0; i < count; ++i) {
        const float* z = logits.data() + i * c;
        const double mx = *std::max_element(z, z + c);
        double total = 0.0;
        std::vector<double> e(c);
        for (std::size_t k = 0; k < c; ++k) total += e[k] = std::exp(double(z[k]) - mx);
        for (std::size_t k = 0; k < c; ++k) prob[begin + i][k] += e[k] / total;
      }
    }
  });

  std::vector<EnsembleDecision> out;
  out.reserve(n);
  for (auto& p : prob) {
    for (double& v : p) v /= config.n_samples;
    out.push_back(decide(std::move(p), config.threshold));
  }
  return out;
}

std::vector<EnsembleDecision> ensemble_predict(const Model& model,
                                               std::span<const ImageRecord> records,
                                               const DefenseConfig& config, int threads) {
  if (records.empty()) return {};
  std::vector<std::uint32_t> ids;
  for (const auto& r : records) ids.push_back(r.id);
  return ensemble_predict(model, stack_images(records, model.spec().input_side), ids, config,
                          threads);
}

double entropy_quantile(std::vector<double> entropies, double q) {
  if (entropies.empty()) throw Error("entropy_quantile: no values");
  std::sort(entropies.begin(), entropies.end());
  const double pos = q * static_cast<double>(entropies.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, entropies.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return entropies[lo] + frac * (entropies[hi] - entropies[lo]);
}

double calibrate_threshold(const Model& model, std::span<const ImageRecord> validation,
                           const DefenseConfig& config, double fpr, int threads) {
  if (!(fpr > 0.0 && fpr < 1.0)) throw ConfigError("calibrate: fpr must lie in (0, 1)");
  const auto needed = static_cast<std::size_t>(std::ceil(1.0 / fpr - 1e-9));
  if (validation.size() < needed)
    throw ConfigError("calibrate: " + std::to_string(validation.size()) +
                      " validation images cannot resolve a " + format_number(fpr) +
                      " rejection rate; use at least " + std::to_string(needed));
  DefenseConfig open = config;
  open.threshold.reset();
  const auto decisions = ensemble_predict(model, validation, open, threads);
  std::vector<double> h;
  h.reserve(decisions.size());
  for (const auto& d : decisions) h.push_back(d.entropy);
  return entropy_quantile(std::move(h), 1.0 - fpr);
}

Outcome outcome_of(const EnsembleDecision& decision, int label) {
  if (!decision.accepted) return Outcome::Rejected;
  return decision.label == label ? Outcome::AcceptedRight : Outcome::AcceptedWrong;
}

DecisionTable defend_decisions(const Model& model, std::span<const ImageRecord> records,
                               std::span<const AttackConfig> attacks, const DefenseConfig& config,
                               int threads) {
  DecisionTable table;
  table.clean = ensemble_predict(model, records, config, threads);
  std::vector<std::uint32_t> ids;
  for (const auto& r : records) ids.push_back(r.id);
  for (const auto& attack : attacks) {
    const AdversarialResult adv = attack_records(model, records, attack, threads);
    table.adversarial.push_back(ensemble_predict(model, adv.adversarial, ids, config, threads));
  }
  return table;
}

OutcomeTable outcomes_at(const DecisionTable& table, std::span<const ImageRecord> records,
                         std::optional<double> threshold) {
  const auto convert = [&](const std::vector<EnsembleDecision>& decisions) {
    if (decisions.size() != records.size())
      throw Error("outcomes_at: decision and record counts differ");
    std::vector<Outcome> out;
    out.reserve(decisions.size());
    for (std::size_t i = 0; i < decisions.size(); ++i) {
      EnsembleDecision d = decisions[i];
      d.accepted = !threshold || d.entropy <= *threshold;
      out.push_back(outcome_of(d, records[i].label));
    }
    return out;
  };
  OutcomeTable out;
  out.clean = convert(table.clean);
  for (const auto& row : table.adversarial) out.adversarial.push_back(convert(row));
  return out;
}

OutcomeTable defend_outcomes(const Model& model, std::span<const ImageRecord> records,
                             std::span<const AttackConfig> attacks, const DefenseConfig& config,
                             int threads) {
  return outcomes_at(defend_decisions(model, records, attacks, config, threads), records,
                     config.threshold);
}

AccuracyReport summarize(const OutcomeTable& table, std::span<const std::size_t> attack_rows) {
  AccuracyReport r;
  r.count = table.clean.size();
  if (r.count == 0) return r;
  std::size_t clean_right = 0, clean_rej = 0, adv_ok = 0, adv_rej = 0;
  for (std::size_t i = 0; i < r.count; ++i) {
    clean_right += table.clean[i] == Outcome::AcceptedRight;
    clean_rej += table.clean[i] == Outcome::Rejected;
    // The unperturbed input is itself a feasible attack.
    Outcome worst = table.clean[i];
    for (std::size_t row : attack_rows) worst = std::min(worst, table.adversarial.at(row).at(i));
    adv_ok += worst != Outcome::AcceptedWrong;
    adv_rej += worst == Outcome::Rejected;
  }
  const double n = static_cast<double>(r.count);
  r.clean_acc = clean_right / n;
  r.clean_reject = clean_rej / n;
  r.adv_acc = adv_ok / n;
  r.adv_reject = adv_rej / n;
  return r;
}

AccuracyReport robust_accuracy(const Model& model, std::span<const ImageRecord> records,
                               std::span<const AttackConfig> attacks, const DefenseConfig& config,
                               int threads) {
  const OutcomeTable table = defend_outcomes(model, records, attacks, config, threads);
  std::vector<std::size_t> rows(attacks.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return summarize(table, rows);
}

std::string format_result_row(const ResultRow& row) {
  std::string out;
  out += row.dataset + ',' + row.model_id + ',' + row.train_policy + ',' +
         format_number(row.drop_rate) + ',' + row.norm + ',' + format_number(row.eps) + ',' +
         row.loss + ',' + row.goal + ',' + std::to_string(row.eot) + ',' +
         std::to_string(row.n_samples) + ',' +
         (row.threshold ? format_number(*row.threshold) : std::string()) + ',' +
         format_number(row.report.clean_acc) + ',' + format_number(row.report.adv_acc) + ',' +
         format_number(row.report.clean_reject) + ',' + format_number(row.report.adv_reject);
  return out;
}

void append_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  if (fresh) out << kResultsHeader << '\n';
  for (const auto& row : rows) out << format_result_row(row) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace pxdrop
