// SPDX-License-Identifier: Apache-2.0
//
// Deployed prediction: average the softmax over several independently
// subsampled copies of an input, then abstain when the entropy of the average
// exceeds a threshold calibrated on clean validation data.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pxdrop/attacks.hpp"
#include "pxdrop/dataset.hpp"
#include "pxdrop/model.hpp"
#include "pxdrop/subsample.hpp"

namespace pxdrop {

struct DefenseConfig {
  int n_samples = 10;
  double drop_rate = 0.9;
  Granularity granularity = Granularity::PerElement;
  std::optional<double> threshold;  // unset: always accept
  std::uint64_t seed = 0;

  void validate(int num_classes) const;
};

struct EnsembleDecision {
  std::vector<double> mean_prob;
  double entropy = 0.0;
  bool accepted = true;
  int label = 0;  // argmax of mean_prob (lowest index on ties)
};

// -sum p log p with 0 log 0 = 0. Entries must be non-negative; the vector is
// divided by its sum first.
double entropy(std::span<const double> p);

// Accept/reject from an averaged probability vector alone.
EnsembleDecision decide(std::vector<double> mean_prob, std::optional<double> threshold);

// One decision per row of `batch` [N,3,d,d]. Masks are keyed by image id and
// sample index with the evaluation stream, so sample i matches trial i of
// trainer evaluate() under the same seed.
std::vector<EnsembleDecision> ensemble_predict(const Model& model, const Tensor& batch,
                                               std::span<const std::uint32_t> ids,
                                               const DefenseConfig& config, int threads = 1);

std::vector<EnsembleDecision> ensemble_predict(const Model& model,
                                               std::span<const ImageRecord> records,
                                               const DefenseConfig& config, int threads = 1);

// (1 - fpr) quantile of ensemble entropies over clean records, by linear
// interpolation between order statistics.
double entropy_quantile(std::vector<double> entropies, double q);

double calibrate_threshold(const Model& model, std::span<const ImageRecord> validation,
                           const DefenseConfig& config, double fpr, int threads = 1);

// Ordered from worst to best for the defender.
enum class Outcome { AcceptedWrong = 0, Rejected = 1, AcceptedRight = 2 };

Outcome outcome_of(const EnsembleDecision& decision, int label);

struct AccuracyReport {
  std::size_t count = 0;
  double clean_acc = 0.0;     // accepted with the true label
  double adv_acc = 0.0;       // accepted right or rejected
  double clean_reject = 0.0;
  double adv_reject = 0.0;
};

// Per-image outcomes under one attack (or the clean inputs).
struct OutcomeTable {
  std::vector<Outcome> clean;
  std::vector<std::vector<Outcome>> adversarial;  // one row per attack config
};

// Averaged predictions for clean inputs and for each attack's adversarial
// inputs. Thresholds can be applied afterwards with outcomes_at().
struct DecisionTable {
  std::vector<EnsembleDecision> clean;
  std::vector<std::vector<EnsembleDecision>> adversarial;
};

DecisionTable defend_decisions(const Model& model, std::span<const ImageRecord> records,
                               std::span<const AttackConfig> attacks, const DefenseConfig& config,
                               int threads = 1);

OutcomeTable outcomes_at(const DecisionTable& table, std::span<const ImageRecord> records,
                         std::optional<double> threshold);

// Runs every attack against the records and classifies clean and adversarial
// inputs through the defense.
OutcomeTable defend_outcomes(const Model& model, std::span<const ImageRecord> records,
                             std::span<const AttackConfig> attacks, const DefenseConfig& config,
                             int threads = 1);

// Aggregates rows of an outcome table. Each image keeps its worst outcome
// over the clean input and the selected attack rows (best-of for the
// attacker); with no rows the clean outcomes alone are reported.
AccuracyReport summarize(const OutcomeTable& table, std::span<const std::size_t> attack_rows);

AccuracyReport robust_accuracy(const Model& model, std::span<const ImageRecord> records,
                               std::span<const AttackConfig> attacks, const DefenseConfig& config,
                               int threads = 1);

// One line of the unified results file.
struct ResultRow {
  std::string dataset, model_id, train_policy;
  double drop_rate = 0.0;
  std::string norm;  // "none" without attack
  double eps = 0.0;
  std::string loss, goal;  // "best" for best-of rows
  int eot = 0;
  int n_samples = 1;
  std::optional<double> threshold;
  AccuracyReport report;
};

inline constexpr const char* kResultsHeader =
    "dataset,model_id,train_policy,drop_rate,attack_norm,eps,loss,goal,eot,n_samples,tau,"
    "clean_acc,adv_acc,clean_reject,adv_reject";

std::string format_result_row(const ResultRow& row);

// Appends rows, writing the header first when the file is new or empty.
void append_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows);

}  // namespace pxdrop
