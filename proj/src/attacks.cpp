// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pxdrop/parallel.hpp"
#include "pxdrop/text.hpp"

namespace pxdrop {

namespace {

constexpr std::size_t kAttackChunk = 32;

int argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t classes = logits.size(1);
  const float* z = logits.data() + row * classes;
  return static_cast<int>(std::max_element(z, z + classes) - z);
}

// Returns the summed objective J and writes dJ/dx into `grad` (accumulating).
double accumulate_gradient(const Classifier& forward, const Tensor& x, const Tensor* mask,
                           std::span<const int> labels, const AttackConfig& config,
                           std::vector<float>& grad) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  const Tensor input = mask ? mul(leaf, *mask) : leaf;
  const Tensor objective =
      attack_objective(forward(input), labels, config.loss, config.goal);
  objective.backward();
  const auto& g = leaf.grad();
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  return static_cast<double>(objective.item());
}

void random_start(std::span<float> x, std::span<const float> x0, const AttackConfig& config,
                  std::uint32_t id) {
  CounterRng rng({config.seed, Stream::AttackStart, id, 0, 0});
  if (config.norm == Norm::Linf) {
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = x0[i] + static_cast<float>((2.0 * rng.uniform() - 1.0) * config.eps);
  } else if (config.norm == Norm::L2) {
    std::vector<double> d(x.size());
    double norm = 0.0;
    for (auto& v : d) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double radius = config.eps * rng.uniform();
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] = x0[i] + static_cast<float>(d[i] / norm * radius);
  } else {
    return;
  }
  project(config.norm, x, x0, config.eps);
}

}  // namespace

Norm parse_norm(const std::string& text) {
  if (text == "l0") return Norm::L0;
  if (text == "l2") return Norm::L2;
  if (text == "linf") return Norm::Linf;
  throw ConfigError("unknown norm '" + text + "' (expected l0|l2|linf)");
}

LossKind parse_loss(const std::string& text) {
  if (text == "ce") return LossKind::CrossEntropy;
  if (text == "cw") return LossKind::CW;
  throw ConfigError("unknown attack loss '" + text + "' (expected ce|cw)");
}

Goal parse_goal(const std::string& text) {
  if (text == "misclassify") return Goal::Misclassify;
  if (text == "targeted") return Goal::Targeted;
  throw ConfigError("unknown attack goal '" + text + "' (expected misclassify|targeted)");
}

std::string to_string(Norm norm) {
  switch (norm) {
    case Norm::L0:
      return "l0";
    case Norm::L2:
      return "l2";
    case Norm::Linf:
      return "linf";
  }
  return "linf";
}

std::string to_string(LossKind loss) { return loss == LossKind::CW ? "cw" : "ce"; }
std::string to_string(Goal goal) { return goal == Goal::Targeted ? "targeted" : "misclassify"; }

void AttackConfig::validate() const {
  if (!(eps > 0.0)) throw ConfigError("attack: eps must be > 0");
  if (!(step > 0.0)) throw ConfigError("attack: step must be > 0");
  if (iterations < 1) throw ConfigError("attack: iterations must be >= 1");
  if (eot_samples < 0) throw ConfigError("attack: eot_samples must be >= 0");
  if (!(eot_drop_rate >= 0.0 && eot_drop_rate <= 1.0))
    throw ConfigError("attack: eot drop rate must lie in [0, 1]");
  if (norm == Norm::L0) {
    if (eps > 1.0) throw ConfigError("attack: L0 eps is a fraction of locations, at most 1");
    if (step != std::floor(step)) throw ConfigError("attack: L0 step counts locations");
  } else {
    if (step > 2.0) throw ConfigError("attack: step larger than the input range");
    if (step > eps) throw ConfigError("attack: step exceeds eps");
  }
}

std::string AttackConfig::describe() const {
  std::string out = to_string(norm) + " eps=" + format_number(eps) + " step=" +
                    format_number(step) + " iters=" + std::to_string(iterations) + " " +
                    to_string(loss) + " " + to_string(goal);
  if (goal == Goal::Targeted && target >= 0) out += "(" + std::to_string(target) + ")";
  if (eot_samples > 0)
    out += " eot=" + std::to_string(eot_samples) + "@" + format_number(eot_drop_rate);
  return out;
}

std::size_t l0_budget(double eps, std::size_t locations) {
  // Nudge so 0.03 * 1024 = 30.72 -> 30 is not disturbed by representation error.
  return static_cast<std::size_t>(std::floor(eps * static_cast<double>(locations) + 1e-9));
}

AttackConfig attack_defaults(const std::string& preset, Norm norm, int side) {
  AttackConfig c;
  c.norm = norm;
  c.eot_samples = 10;
  const bool gtsrb = preset == "gtsrb";
  if (!gtsrb && preset != "cifar10")
    throw ConfigError("unknown attack preset '" + preset + "' (expected cifar10|gtsrb)");
  switch (norm) {
    case Norm::L2:
      c.eps = gtsrb ? 512.0 / 255.0 : 1.0;
      c.step = gtsrb ? 32.0 / 255.0 : 16.0 / 255.0;
      c.iterations = 20;
      break;
    case Norm::Linf:
      c.eps = gtsrb ? 32.0 / 255.0 : 16.0 / 255.0;
      c.step = gtsrb ? 4.0 / 255.0 : 2.0 / 255.0;
      c.iterations = 20;
      break;
    case Norm::L0:
      c.eps = 0.03;
      c.step = 1.0;
      c.iterations = static_cast<int>(
          std::max<std::size_t>(1, l0_budget(c.eps, static_cast<std::size_t>(side * side))));
      break;
  }
  return c;
}

Tensor cw_loss(const Tensor& logits, std::span<const int> labels, Goal goal,
               Reduction reduction) {
  Tensor margin = class_margin(logits, labels);
  if (goal == Goal::Targeted) margin = scale(margin, -1.0f);
  return reduction == Reduction::Sum ? sum(margin) : mean(margin);
}

Tensor attack_objective(const Tensor& logits, std::span<const int> labels, LossKind loss,
                        Goal goal) {
  if (loss == LossKind::CrossEntropy) {
    const Tensor ce = cross_entropy(logits, labels, Reduction::Sum);
    return goal == Goal::Misclassify ? ce : scale(ce, -1.0f);
  }
  return scale(cw_loss(logits, labels, goal, Reduction::Sum), -1.0f);
}

Tensor attack_gradient(const Model& model, const Tensor& x, std::span<const int> labels,
                       std::span<const std::uint32_t> ids, const AttackConfig& config,
                       std::uint32_t round) {
  return attack_gradient([&](const Tensor& in) { return model.forward(in, Mode::Eval, false); },
                         x, labels, ids, config, round);
}

Tensor attack_gradient(const Classifier& forward, const Tensor& x, std::span<const int> labels,
                       std::span<const std::uint32_t> ids, const AttackConfig& config,
                       std::uint32_t round) {
  if (x.dim() != 4 || ids.size() != x.size(0) || labels.size() != x.size(0))
    throw ShapeError("attack_gradient: batch " + shape_str(x.shape()) + " with " +
                     std::to_string(labels.size()) + " labels and " +
                     std::to_string(ids.size()) + " ids");
  std::vector<float> grad(x.numel(), 0.0f);
  if (config.eot_samples == 0) {
    accumulate_gradient(forward, x, nullptr, labels, config, grad);
    return Tensor(x.shape(), std::move(grad));
  }
  const Shape image(x.shape().begin() + 1, x.shape().end());
  for (int s = 0; s < config.eot_samples; ++s) {
    std::vector<Mask> masks;
    masks.reserve(ids.size());
    for (std::uint32_t id : ids)
      masks.push_back(sample_mask(image, config.eot_drop_rate, config.eot_granularity,
                                  {config.seed, Stream::AttackMask, id, round,
                                   static_cast<std::uint32_t>(s)}));
    const Tensor m = stack_masks(masks);
    accumulate_gradient(forward, x, &m, labels, config, grad);
  }
  const float inv = 1.0f / static_cast<float>(config.eot_samples);
  for (float& g : grad) g *= inv;
  return Tensor(x.shape(), std::move(grad));
}

void project(Norm norm, std::span<float> x, std::span<const float> x0, double eps) {
  if (x.size() != x0.size()) throw ShapeError("project: iterate and origin sizes differ");
  if (norm == Norm::Linf) {
    const float e = static_cast<float>(eps);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], x0[i] - e, x0[i] + e);
  } else if (norm == Norm::L2) {
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x[i]) - x0[i];
      sq += d * d;
    }
    const double n = std::sqrt(sq);
    if (n > eps) {
      // Rounding to float can leave the result a hair outside the ball; shrink
      // until it is inside so a second projection is a no-op.
      const std::vector<float> before(x.begin(), x.end());
      for (double f = eps / n;; f *= 1.0 - 1e-7) {
        double after = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
          x[i] = static_cast<float>(x0[i] + (static_cast<double>(before[i]) - x0[i]) * f);
          const double d = static_cast<double>(x[i]) - x0[i];
          after += d * d;
        }
        if (std::sqrt(after) <= eps) break;
      }
    }
  }
  for (float& v : x) v = std::clamp(v, -1.0f, 1.0f);
}

void step_and_project(Norm norm, std::span<float> x, std::span<const float> x0,
                      std::span<const float> grad, double eps, double step,
                      std::size_t channels, L0State* state) {
  if (x.size() != x0.size() || x.size() != grad.size())
    throw ShapeError("step_and_project: iterate, origin and gradient sizes differ");
  if (norm == Norm::Linf) {
    const float s = static_cast<float>(step);
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] += grad[i] > 0.0f ? s : (grad[i] < 0.0f ? -s : 0.0f);
    project(norm, x, x0, eps);
    return;
  }
  if (norm == Norm::L2) {
    double sq = 0.0;
    for (float g : grad) sq += static_cast<double>(g) * g;
    if (sq > 0.0) {
      const double f = step / std::sqrt(sq);
      for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = static_cast<float>(x[i] + grad[i] * f);
    }
    project(norm, x, x0, eps);
    return;
  }

  if (channels == 0 || x.size() % channels != 0)
    throw ShapeError("step_and_project: image size not divisible by channel count");
  const std::size_t locations = x.size() / channels;
  if (!state) throw Error("step_and_project: L0 needs per-image state");
  if (state->modified.empty()) state->modified.assign(locations, 0);
  const std::size_t budget = l0_budget(eps, locations);
  for (std::size_t k = 0; k < static_cast<std::size_t>(step); ++k) {
    if (state->used >= budget) return;
    std::size_t best = locations;
    double best_score = -1.0;
    for (std::size_t p = 0; p < locations; ++p) {
      if (state->modified[p]) continue;
      double score = 0.0;
      for (std::size_t c = 0; c < channels; ++c) score += std::fabs(grad[c * locations + p]);
      if (score > best_score) {
        best_score = score;
        best = p;
      }
    }
    if (best == locations) return;
    for (std::size_t c = 0; c < channels; ++c) {
      const float g = grad[c * locations + best];
      if (g > 0.0f) x[c * locations + best] = 1.0f;
      if (g < 0.0f) x[c * locations + best] = -1.0f;
    }
    state->modified[best] = 1;
    ++state->used;
  }
}

double perturbation_norm(Norm norm, std::span<const float> x, std::span<const float> x0,
                         std::size_t channels) {
  if (norm == Norm::L0) {
    const std::size_t locations = x.size() / channels;
    std::size_t changed = 0;
    for (std::size_t p = 0; p < locations; ++p) {
      bool diff = false;
      for (std::size_t c = 0; c < channels; ++c)
        diff = diff || x[c * locations + p] != x0[c * locations + p];
      changed += diff;
    }
    return static_cast<double>(changed);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::fabs(static_cast<double>(x[i]) - x0[i]);
    acc = norm == Norm::Linf ? std::max(acc, d) : acc + d * d;
  }
  return norm == Norm::Linf ? acc : std::sqrt(acc);
}

AdversarialResult pgd(const Model& model, const Tensor& x, std::span<const int> labels,
                      std::span<const std::uint32_t> ids, const AttackConfig& config) {
  config.validate();
  if (x.dim() != 4 || labels.size() != x.size(0) || ids.size() != x.size(0))
    throw ShapeError("pgd: batch " + shape_str(x.shape()) + " with " +
                     std::to_string(labels.size()) + " labels and " +
                     std::to_string(ids.size()) + " ids");
  for (float v : x.values())
    if (v < -1.0f || v > 1.0f) throw Error("pgd: clean input outside [-1, 1]");
  const std::size_t n = x.size(0), channels = x.size(1), per = x.numel() / std::max<std::size_t>(n, 1);
  const int classes = model.spec().num_classes;

  AdversarialResult result;
  result.goal_labels.assign(labels.begin(), labels.end());
  if (config.goal == Goal::Targeted) {
    for (std::size_t i = 0; i < n; ++i) {
      if (config.target >= 0) {
        if (config.target >= classes) throw ConfigError("pgd: target class out of range");
        result.goal_labels[i] = config.target;
      } else {
        CounterRng rng({config.seed, Stream::AttackTarget, ids[i], 0, 0});
        int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
        if (t >= labels[i]) ++t;
        result.goal_labels[i] = t;
      }
    }
  }

  const std::span<const float> x0 = x.values();
  std::vector<float> cur(x0.begin(), x0.end());
  if (config.random_start)
    for (std::size_t i = 0; i < n; ++i)
      random_start(std::span<float>(cur).subspan(i * per, per), x0.subspan(i * per, per), config,
                   ids[i]);
  std::vector<L0State> l0(n);

  for (int it = 0; it < config.iterations; ++it) {
    const Tensor iterate(x.shape(), cur);
    const Tensor g = attack_gradient(model, iterate, result.goal_labels, ids, config,
                                     static_cast<std::uint32_t>(it));
    const Tensor logits = model.forward(iterate, Mode::Eval, false);
    result.loss_trace.push_back(
        static_cast<double>(
            attack_objective(logits, result.goal_labels, config.loss, config.goal).item()) /
        static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      step_and_project(config.norm, std::span<float>(cur).subspan(i * per, per),
                       x0.subspan(i * per, per), g.values().subspan(i * per, per), config.eps,
                       config.step, channels, &l0[i]);
  }

  result.adversarial = Tensor(x.shape(), std::move(cur));
  const Tensor logits = model.forward(result.adversarial, Mode::Eval, false);
  for (std::size_t i = 0; i < n; ++i) {
    const int pred = argmax_row(logits, i);
    result.success.push_back(config.goal == Goal::Misclassify ? pred != labels[i]
                                                              : pred == result.goal_labels[i]);
    result.achieved.push_back(perturbation_norm(config.norm,
                                                result.adversarial.values().subspan(i * per, per),
                                                x0.subspan(i * per, per), channels));
  }
  return result;
}

AdversarialResult attack_records(const Model& model, std::span<const ImageRecord> records,
                                 const AttackConfig& config, int threads) {
  if (records.empty()) throw Error("attack_records: no records");
  const int side = model.spec().input_side;
  const std::size_t chunks = (records.size() + kAttackChunk - 1) / kAttackChunk;
  std::vector<AdversarialResult> parts(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kAttackChunk;
    const auto slice = records.subspan(begin, std::min(kAttackChunk, records.size() - begin));
    std::vector<int> labels;
    std::vector<std::uint32_t> ids;
    for (const auto& r : slice) {
      labels.push_back(r.label);
      ids.push_back(r.id);
    }
    parts[c] = pgd(model, stack_images(slice, side), labels, ids, config);
  });

  AdversarialResult all;
  std::vector<float> pixels;
  pixels.reserve(records.size() * 3 * static_cast<std::size_t>(side * side));
  all.loss_trace.assign(static_cast<std::size_t>(config.iterations), 0.0);
  for (const auto& p : parts) {
    pixels.insert(pixels.end(), p.adversarial.values().begin(), p.adversarial.values().end());
    all.goal_labels.insert(all.goal_labels.end(), p.goal_labels.begin(), p.goal_labels.end());
    all.achieved.insert(all.achieved.end(), p.achieved.begin(), p.achieved.end());
    all.success.insert(all.success.end(), p.success.begin(), p.success.end());
    const double w = static_cast<double>(p.goal_labels.size()) / static_cast<double>(records.size());
    for (std::size_t i = 0; i < all.loss_trace.size(); ++i) all.loss_trace[i] += w * p.loss_trace[i];
  }
  all.adversarial = Tensor({records.size(), 3, static_cast<std::size_t>(side),
                            static_cast<std::size_t>(side)},
                           std::move(pixels));
  return all;
}

void export_adversarial(const AdversarialResult& result, std::span<const ImageRecord> records,
                        const AttackConfig& config, const std::filesystem::path& bundle_path,
                        const std::filesystem::path& manifest_path) {
  if (records.size() != result.success.size())
    throw Error("export_adversarial: result and record counts differ");
  const int side = static_cast<int>(result.adversarial.size(2));
  TensorBundle bundle;
  bundle.metadata = {{"attack", config.describe()}, {"count", std::to_string(records.size())}};
  bundle.tensors.emplace_back("adversarial", result.adversarial);
  bundle.tensors.emplace_back("clean", stack_images(records, side));
  save_bundle(bundle, bundle_path);

  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw Error("cannot write " + manifest_path.string());
  out << "image_id,goal,loss,norm,achieved_norm,success\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::string goal = to_string(config.goal);
    if (config.goal == Goal::Targeted) goal += ":" + std::to_string(result.goal_labels[i]);
    out << records[i].id << ',' << goal << ',' << to_string(config.loss) << ','
        << to_string(config.norm) << ',' << format_number(result.achieved[i]) << ','
        << (result.success[i] ? 1 : 0) << '\n';
  }
  if (!out) throw Error("failed writing " + manifest_path.string());
}

}  // namespace pxdrop
