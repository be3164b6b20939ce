// SPDX-License-Identifier: Apache-2.0
//
// Projected gradient attacks under L0, L2 and L-infinity budgets. Attacks run
// on whole batches in eval mode; every image keeps its own budget, label and
// mask stream, so results do not depend on how images are grouped.
//
// Sign convention: the attacker maximizes an objective J per image.
//   CE, misclassify:  J =  CE(z, y)
//   CE, targeted:     J = -CE(z, t)
//   CW, misclassify:  J = -(z_y - max_{c!=y} z_c)
//   CW, targeted:     J = -(max_{c!=t} z_c - z_t)
// cw_loss returns the bracketed margins, which the attacker drives down.
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
#include "pxdrop/ops.hpp"
#include "pxdrop/subsample.hpp"

namespace pxdrop {

enum class Norm { L0, L2, Linf };
enum class LossKind { CrossEntropy, CW };
enum class Goal { Misclassify, Targeted };

Norm parse_norm(const std::string& text);
LossKind parse_loss(const std::string& text);
Goal parse_goal(const std::string& text);
std::string to_string(Norm norm);
std::string to_string(LossKind loss);
std::string to_string(Goal goal);

struct AttackConfig {
  Norm norm = Norm::Linf;
  // L2/Linf: radius in input units. L0: fraction of spatial locations.
  double eps = 16.0 / 255.0;
  // L2/Linf: per-iteration step length. L0: locations changed per step (1).
  double step = 2.0 / 255.0;
  int iterations = 20;
  LossKind loss = LossKind::CrossEntropy;
  Goal goal = Goal::Misclassify;
  // Fixed target class for Targeted; -1 draws a random class != label per image.
  int target = -1;
  int eot_samples = 0;  // 0: gradient of the unmasked model
  double eot_drop_rate = 0.0;
  Granularity eot_granularity = Granularity::PerElement;
  std::uint64_t seed = 0;
  bool random_start = false;  // L2/Linf only

  void validate() const;
  std::string describe() const;
};

// Locations an L0 attack may change for images with `locations` pixels.
std::size_t l0_budget(double eps, std::size_t locations);

// Paper-default constants for "cifar10" or "gtsrb"; side sets the L0 budget
// and iteration count. eot_samples defaults to 10.
AttackConfig attack_defaults(const std::string& preset, Norm norm, int side);

// Margin loss summed (or averaged) over rows; see the header comment.
Tensor cw_loss(const Tensor& logits, std::span<const int> labels, Goal goal,
               Reduction reduction = Reduction::Mean);

// Summed attacker objective J over the batch.
Tensor attack_objective(const Tensor& logits, std::span<const int> labels, LossKind loss,
                        Goal goal);

// Ascent direction dJ/dX for each image, averaged over eot_samples masks
// (each term taken at X o M and multiplied by M). `labels` are the goal
// classes: true labels for Misclassify, targets for Targeted. `round`
// separates mask draws between PGD iterations.
Tensor attack_gradient(const Model& model, const Tensor& x, std::span<const int> labels,
                       std::span<const std::uint32_t> ids, const AttackConfig& config,
                       std::uint32_t round = 0);

// Any differentiable map from [N,C,H,W] inputs to [N,K] logits.
using Classifier = std::function<Tensor(const Tensor&)>;
Tensor attack_gradient(const Classifier& forward, const Tensor& x, std::span<const int> labels,
                       std::span<const std::uint32_t> ids, const AttackConfig& config,
                       std::uint32_t round = 0);

// Per-image L0 bookkeeping: which spatial locations were already changed.
struct L0State {
  std::vector<std::uint8_t> modified;
  std::size_t used = 0;
};

// One image (channel-planar [C,H,W] spans). L2/Linf take a step of size
// `step` then project onto the eps-ball around x0 and the [-1,1] box. L0 moves
// the unmodified location with the largest channel-summed |g| to the +-1
// extremes given by the gradient signs, while state.used < budget.
void step_and_project(Norm norm, std::span<float> x, std::span<const float> x0,
                      std::span<const float> grad, double eps, double step,
                      std::size_t channels, L0State* state = nullptr);

// Projection alone (L2/Linf): eps-ball around x0 then [-1,1].
void project(Norm norm, std::span<float> x, std::span<const float> x0, double eps);

// Perturbation size in the attack's norm (L0: changed spatial locations).
double perturbation_norm(Norm norm, std::span<const float> x, std::span<const float> x0,
                         std::size_t channels);

struct AdversarialResult {
  Tensor adversarial;               // [N,C,H,W]
  std::vector<int> goal_labels;     // label or target per image
  std::vector<double> achieved;     // perturbation norm per image
  std::vector<bool> success;        // on the unmasked eval-mode model
  std::vector<double> loss_trace;   // mean objective J per iteration
};

AdversarialResult pgd(const Model& model, const Tensor& x, std::span<const int> labels,
                      std::span<const std::uint32_t> ids, const AttackConfig& config);

// Runs pgd over records in chunks (optionally on several threads).
AdversarialResult attack_records(const Model& model, std::span<const ImageRecord> records,
                                 const AttackConfig& config, int threads = 1);

// Adversarial images as a tensor bundle plus a CSV manifest with one row per
// image: image_id, goal, loss, norm, achieved_norm, success.
void export_adversarial(const AdversarialResult& result, std::span<const ImageRecord> records,
                        const AttackConfig& config, const std::filesystem::path& bundle_path,
                        const std::filesystem::path& manifest_path);

}  // namespace pxdrop
