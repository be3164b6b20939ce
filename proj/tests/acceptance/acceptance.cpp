// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: property suites plus trend checks on desk-scale models
// trained on the synthetic sign dataset. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails.
#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "pxdrop/attacks.hpp"
#include "pxdrop/checkpoint.hpp"
#include "pxdrop/defense.hpp"
#include "pxdrop/experiment.hpp"
#include "pxdrop/introspect.hpp"
#include "pxdrop/subsample.hpp"
#include "pxdrop/trainer.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace pxdrop;

namespace {

// ---- tolerances ----------------------------------------------------------

constexpr double kGradH = 1e-4;
constexpr double kGradTol = 1e-3;
constexpr int kGradInstances = 20;
constexpr double kConvTol = 1e-5;
constexpr int kConvCases = 100;
constexpr int kCwCases = 1000;
constexpr int kMaskTrials = 100;
constexpr int kMaskInside = 99;
constexpr int kProjectionCases = 1000;
constexpr double kProjectionSlack = 1e-6;
constexpr int kEotReps = 200;
constexpr double kEntropyTol = 1e-9;
constexpr double kFpr = 0.01;
constexpr std::size_t kMinCalibration = 5000;
constexpr double kRejectLo = 0.005, kRejectHi = 0.02;
constexpr double kMonotoneSlack = 0.02;
constexpr double kMaxDropGap = 0.20;
constexpr double kTrendSlack = 0.01;
constexpr double kRobustMargin = 0.10;
constexpr double kMaxCleanCost = 0.01;
constexpr double kDualGap = 0.05;

// ---- desk-scale experiment ----------------------------------------------

constexpr std::uint64_t kSeed = 2024;
constexpr int kSide = 24;
constexpr int kClasses = 8;
constexpr int kPerClass = 3000;
constexpr int kEpochs = 10;
constexpr int kEvalTrials = 3;
constexpr std::size_t kAttacked = 100;
constexpr int kEnsemble = 10;
constexpr double kDeployRate = 0.9;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[1024];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

void note(const std::string& text) {
  std::fprintf(stderr, "# %s\n", text.c_str());
  std::fflush(stderr);
}

double elapsed_s(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---- 1-5: property suites -------------------------------------------------

Verdict autodiff() {
  double worst = 0;
  std::string name;
  const auto cases = testing::gradient_cases();
  for (const auto& c : cases) {
    const double e = testing::gradcheck_worst(c, kGradInstances, kGradH);
    if (e >= worst) worst = e, name = c.name;
  }
  return {worst < kGradTol,
          fmt("%zu cases x %d instances, worst relative error %.2e (%s), limit %.0e",
              cases.size(), kGradInstances, worst, name.c_str(), kGradTol)};
}

Verdict oracles() {
  const double conv = testing::conv_vs_naive_worst(kConvCases, kSeed);
  std::mt19937_64 gen(kSeed);
  std::uniform_int_distribution<int> cls(2, 12);
  int mismatches = 0;
  for (int trial = 0; trial < kCwCases; ++trial) {
    const std::size_t k = static_cast<std::size_t>(cls(gen));
    const Tensor z = testing::random_tensor<float>({1, k}, gen, -5, 5);
    const std::vector<int> y{static_cast<int>(gen() % k)};
    float other = -INFINITY;
    for (std::size_t c = 0; c < k; ++c)
      if (static_cast<int>(c) != y[0]) other = std::max(other, z.values()[c]);
    const float margin = z.values()[static_cast<std::size_t>(y[0])] - other;
    mismatches += cw_loss(z, y, Goal::Misclassify, Reduction::Sum).item() != margin;
    mismatches += cw_loss(z, y, Goal::Targeted, Reduction::Sum).item() != -margin;
  }
  return {conv < kConvTol && mismatches == 0,
          fmt("conv2d vs loops max |diff| %.2e over %d cases (limit %.0e); CW vs class max: "
              "%d mismatches over %d vectors",
              conv, kConvCases, kConvTol, mismatches, kCwCases)};
}

Verdict mask_statistics() {
  const Shape shape{3, 32, 32};
  const double n = static_cast<double>(shape_numel(shape));
  bool pass = true;
  std::string detail;
  for (double r : {0.1, 0.5, 0.9}) {
    const double bound = 4 * std::sqrt(r * (1 - r) / n);
    int inside = 0;
    for (std::uint32_t t = 0; t < kMaskTrials; ++t) {
      const Mask m = sample_mask(shape, r, Granularity::PerElement, {kSeed, Stream::EvalMask, t, 0, 0});
      double zeros = 0;
      for (float b : m.bits.values()) zeros += b == 0.0f;
      inside += std::abs(zeros / n - r) <= bound;
    }
    pass = pass && inside >= kMaskInside;
    detail += fmt("r=%.1f %d/%d inside; ", r, inside, kMaskTrials);
  }
  bool exact = true;
  for (auto g : {Granularity::PerElement, Granularity::PerPixel})
    for (std::uint32_t t = 0; t < 10; ++t) {
      const RngKey key{kSeed, Stream::EvalMask, t, 0, 0};
      for (float b : sample_mask(shape, 0.0, g, key).bits.values()) exact = exact && b == 1.0f;
      for (float b : sample_mask(shape, 1.0, g, key).bits.values()) exact = exact && b == 0.0f;
    }
  return {pass && exact, detail + (exact ? "rates 0 and 1 exact" : "rates 0/1 NOT exact")};
}

Verdict projections() {
  std::mt19937_64 gen(kSeed);
  std::uniform_real_distribution<float> u(-1, 1);
  std::uniform_real_distribution<double> e(0.01, 1.5);
  std::map<Norm, int> bad;
  for (Norm norm : {Norm::L2, Norm::Linf}) {
    for (int trial = 0; trial < kProjectionCases; ++trial) {
      const std::size_t n = 1 + gen() % 200;
      std::vector<float> x0(n), x(n), g(n);
      for (std::size_t i = 0; i < n; ++i) {
        x0[i] = u(gen);
        x[i] = x0[i] + 2 * u(gen);
        g[i] = u(gen);
      }
      const double eps = e(gen);
      project(norm, x, x0, eps);
      step_and_project(norm, x, x0, g, eps, eps * 0.5, 1);
      bool ok = perturbation_norm(norm, x, x0, 1) <= eps + kProjectionSlack;
      for (float v : x) ok = ok && v >= -1.0f && v <= 1.0f;
      const std::vector<float> before = x;
      project(norm, x, x0, eps);
      ok = ok && x == before;
      bad[norm] += !ok;
    }
  }
  for (int trial = 0; trial < kProjectionCases; ++trial) {
    const std::size_t side = 4 + gen() % 29, locations = side * side;
    std::vector<float> x0(3 * locations);
    for (float& v : x0) v = u(gen);
    std::vector<float> x = x0;
    L0State state;
    const std::size_t budget = l0_budget(0.03, locations);
    for (std::size_t it = 0; it < budget + 3; ++it) {
      std::vector<float> g(x.size());
      for (float& v : g) v = u(gen);
      step_and_project(Norm::L0, x, x0, g, 0.03, 1, 3, &state);
    }
    bool ok = perturbation_norm(Norm::L0, x, x0, 3) <= static_cast<double>(budget);
    for (float v : x) ok = ok && v >= -1.0f && v <= 1.0f;
    bad[Norm::L0] += !ok;
  }
  const int total = bad[Norm::L0] + bad[Norm::L2] + bad[Norm::Linf];
  return {total == 0, fmt("violations over %d cases each: L0 %d, L2 %d, Linf %d", kProjectionCases,
                          bad[Norm::L0], bad[Norm::L2], bad[Norm::Linf])};
}

// Two-class linear model under the CW margin: the input gradient g is
// constant, so the masked average over samples has mean (1-r) g. The scalar
// s = <eot, g> / <g, g> has mean 1-r and a closed-form standard deviation.
Verdict eot_gradient() {
  const std::size_t d = 3 * 8 * 8;
  std::mt19937_64 gen(kSeed);
  const Tensor w = testing::random_tensor<float>({d, 2}, gen);
  const Classifier linear = [&](const Tensor& x) { return matmul(reshape(x, {x.size(0), d}), w); };
  const Tensor x = testing::random_tensor<float>({1, 3, 8, 8}, gen);
  const std::vector<int> y{0};
  std::vector<double> g(d);
  double g2 = 0, g4 = 0;
  for (std::size_t i = 0; i < d; ++i) {
    g[i] = w.values()[i * 2 + 1] - w.values()[i * 2];
    g2 += g[i] * g[i];
    g4 += g[i] * g[i] * g[i] * g[i];
  }
  AttackConfig c;
  c.loss = LossKind::CW;
  c.eot_samples = 10;
  c.eot_drop_rate = 0.9;
  const double r = c.eot_drop_rate;
  const double sd = std::sqrt(r * (1 - r) * g4 / (g2 * g2) / c.eot_samples);
  int outside = 0;
  double total = 0, worst_z = 0;
  for (int rep = 0; rep < kEotReps; ++rep) {
    c.seed = kSeed + static_cast<std::uint64_t>(rep);
    const Tensor e = attack_gradient(linear, x, y, std::vector<std::uint32_t>{7}, c);
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += e.values()[i] * g[i];
    s /= g2;
    const double z = std::abs(s - (1 - r)) / sd;
    worst_z = std::max(worst_z, z);
    outside += z > 4;
    total += s;
  }
  const double mean_z = std::abs(total / kEotReps - (1 - r)) / (sd / std::sqrt(kEotReps));
  return {outside == 0 && mean_z <= 4,
          fmt("%d reps: worst |s-(1-r)|/sd %.2f, mean over reps %.2f sd of its own error "
              "(limit 4)",
              kEotReps, worst_z, mean_z)};
}

// ---- trained models -------------------------------------------------------

struct Trained {
  Model model;
  double seconds = 0;
};

ModelSpec desk_spec(int depth) {
  ModelSpec s;
  s.depth = depth;
  s.widths = {8, 16, 32};
  s.num_classes = kClasses;
  s.input_side = kSide;
  return s;
}

Trained train_or_load(const std::string& name, int depth, DropPolicy policy, Objective objective,
                      const DatasetSplit& data, const fs::path& dir, bool reuse) {
  const fs::path path = dir / (name + ".pxd");
  if (reuse && fs::exists(path)) {
    note("reusing " + path.string());
    return {model_from_checkpoint(load_bundle(path)), 0};
  }
  const auto start = std::chrono::steady_clock::now();
  TrainConfig cfg;
  cfg.epochs = kEpochs;
  cfg.batch_size = 64;
  cfg.base_lr = 0.1;
  cfg.policy = policy;
  cfg.objective = objective;
  cfg.seed = kSeed;
  cfg.val_limit = 400;
  Model model(desk_spec(depth), kSeed);
  const TrainResult result = train(model, data, cfg, [&](const EpochMetrics& m) {
    note(fmt("%s epoch %d loss %.4f val %.4f val@0.9 %.4f", name.c_str(), m.epoch, m.train_loss,
             m.val_acc_clean, m.val_acc_drop90));
  });
  save_bundle(result.checkpoint, path);
  write_metrics_csv(dir / (name + "_metrics.csv"), result.metrics);
  const double secs = elapsed_s(start);
  note(fmt("%s trained in %.0f s", name.c_str(), secs));
  return {std::move(model), secs};
}

double accuracy(const Model& m, std::span<const ImageRecord> recs, double rate, int threads) {
  return evaluate(m, recs, rate, rate > 0 ? kEvalTrials : 1, kSeed, Granularity::PerElement,
                  threads);
}

// ---- 12: reproducibility --------------------------------------------------

const char* kReproConfig = R"(seed = 5
output.dir = unused
dataset.kind = synth
dataset.n_per_class = 40
dataset.num_classes = 4
dataset.side = 16
model.id = repro
model.widths = 4,8,8
train.epochs = 2
train.batch_size = 32
train.policy = uniform
train.val_limit = 16
attack.norms = l0,l2,linf
attack.eot_samples = 2
attack.l2.iterations = 3
attack.linf.iterations = 3
defense.drop_rates = 0,0.9
defense.n_samples = 3
defense.fpr = 0.1
eval.limit = 8
explain.count = 2
)";

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testing::read_file(e.path());
  return out;
}

std::map<std::string, std::string> run_all_commands(const fs::path& cfg, const fs::path& out) {
  fs::remove_all(out);
  CommandOptions o;
  o.config = cfg;
  o.out = out;
  o.threads = 1;
  // The commands report progress on stdout; keep the verdict lines clean.
  std::fflush(stdout);
  const int saved = dup(STDOUT_FILENO);
  const int null = open("/dev/null", O_WRONLY);
  dup2(null, STDOUT_FILENO);
  close(null);
  try {
    cmd_train(o);
    cmd_eval(o);
    cmd_attack(o);
    cmd_explain(o);
    cmd_filters(o);
  } catch (...) {
    std::fflush(stdout);
    dup2(saved, STDOUT_FILENO);
    close(saved);
    throw;
  }
  std::fflush(stdout);
  dup2(saved, STDOUT_FILENO);
  close(saved);
  return snapshot(out);
}

Verdict reproducibility(const fs::path& work) {
  const fs::path cfg = work / "repro.cfg";
  std::ofstream(cfg) << kReproConfig;
  const auto first = run_all_commands(cfg, work / "repro");
  const auto second = run_all_commands(cfg, work / "repro");
  std::size_t csv = 0, pxd = 0, differing = 0;
  for (const auto& [name, bytes] : first) {
    csv += name.ends_with(".csv");
    pxd += name.ends_with(".pxd");
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      note("differs between runs: " + name);
    }
  }
  differing += second.size() - std::min(second.size(), first.size());
  return {differing == 0 && csv > 0 && pxd > 0,
          fmt("train/eval/attack/explain/filters rerun: %zu files (%zu csv, %zu checkpoints or "
              "bundles), %zu differ",
              first.size(), csv, pxd, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pxdrop acceptance run"};
  fs::path work;
  bool reuse = false;
  int threads = 1;
  std::set<int> only;
  app.add_option("--work-dir", work, "Directory for checkpoints and scratch files")->required();
  app.add_flag("--reuse", reuse, "Load previously trained checkpoints from the work dir");
  app.add_option("--threads", threads, "Worker threads for evaluation and attacks")
      ->check(CLI::Range(1, 256));
  app.add_option("--only", only, "Run only these criteria (for debugging)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const auto start = std::chrono::steady_clock::now();
  std::map<int, Verdict> verdicts;
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  auto run = [&](int id, const char* title, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    v.detail = std::string(title) + ": " + v.detail;
    note(fmt("C%d done in %.1f s", id, elapsed_s(t0)));
    verdicts[id] = v;
  };

  run(1, "autodiff", autodiff);
  run(2, "reference oracles", oracles);
  run(3, "mask statistics", mask_statistics);
  run(4, "projections", projections);
  run(5, "EOT gradient", eot_gradient);

  const bool need_models = wanted(6) || wanted(7) || wanted(8) || wanted(9) || wanted(10) ||
                           wanted(11);
  if (need_models) {
    SynthSignsOptions so;
    so.n_per_class = kPerClass;
    so.num_classes = kClasses;
    so.side = kSide;
    so.seed = kSeed;
    so.fractions = {0.55, 0.33, 0.12};
    const DatasetSplit data = synth_signs(so);
    note(fmt("synthetic signs: %zu train, %zu validation, %zu test, side %d", data.train.size(),
             data.validation.size(), data.test.size(), data.side));
    const std::span<const ImageRecord> test = data.test;

    std::map<std::string, Trained> models;
    auto need = [&](const std::string& name, int depth, DropPolicy p, Objective o) {
      if (!models.count(name))
        models.emplace(name, train_or_load(name, depth, p, o, data, work, reuse));
      return std::cref(models.at(name).model);
    };
    const auto fixed_policy = DropPolicy::fixed(kDeployRate);

    DefenseConfig defense;
    defense.n_samples = kEnsemble;
    defense.drop_rate = kDeployRate;
    defense.seed = kSeed + 1;
    std::optional<double> tau;

    run(6, "entropy and calibration", [&]() -> Verdict {
      const std::vector<double> uniform(10, 0.1);
      std::vector<double> one_hot(10, 0.0);
      one_hot[3] = 1.0;
      const double hu = entropy(uniform), h1 = entropy(one_hot);
      const bool exact = std::abs(hu - std::log(10.0)) <= kEntropyTol && h1 == 0.0;
      const Model& fixed = need("fixed090", 1, fixed_policy, Objective::Standard);
      const std::span<const ImageRecord> val = data.validation;
      tau = calibrate_threshold(fixed, val, defense, kFpr, threads);
      // Re-measure on held-out images with fresh masks.
      DefenseConfig check = defense;
      check.seed = kSeed + 2;
      check.threshold = tau;
      const auto decisions = ensemble_predict(fixed, test, check, threads);
      std::size_t rejected = 0;
      for (const auto& d : decisions) rejected += !d.accepted;
      const double rate = static_cast<double>(rejected) / static_cast<double>(decisions.size());
      return {exact && val.size() >= kMinCalibration && rate >= kRejectLo && rate <= kRejectHi,
              fmt("H(uniform10)-ln10 = %.1e, H(one-hot) = %g; tau %.4f from %zu validation "
                  "images at fpr %.2f; re-measured rejection %.2f%% on %zu test images "
                  "(allowed %.1f-%.1f%%)",
                  hu - std::log(10.0), h1, *tau, val.size(), kFpr, 100 * rate, decisions.size(),
                  100 * kRejectLo, 100 * kRejectHi)};
    });

    const std::vector<double> rates{0.0, 0.25, 0.5, 0.75, 0.9};
    run(7, "accuracy vs drop rate", [&]() -> Verdict {
      const Model& uni = need("uniform", 1, DropPolicy::uniform(), Objective::Standard);
      std::vector<double> acc;
      std::string curve;
      for (double r : rates) {
        acc.push_back(accuracy(uni, test, r, threads));
        curve += fmt("%.2f:%.3f ", r, acc.back());
      }
      bool monotone = true;
      for (std::size_t i = 1; i < acc.size(); ++i)
        monotone = monotone && acc[i] <= acc[i - 1] + kMonotoneSlack;
      const double gap = acc.front() - acc.back();
      return {monotone && gap <= kMaxDropGap,
              fmt("uniform-rate model %s; clean minus drop-0.9 gap %.3f (limit %.2f)",
                  curve.c_str(), gap, kMaxDropGap)};
    });

    run(8, "training policy and depth", [&]() -> Verdict {
      const Model& uni = need("uniform", 1, DropPolicy::uniform(), Objective::Standard);
      const Model& fixed = need("fixed090", 1, fixed_policy, Objective::Standard);
      const Model& deep = need("uniform_deep", 2, DropPolicy::uniform(), Objective::Standard);
      const double a_uni = accuracy(uni, test, kDeployRate, threads);
      const double a_fix = accuracy(fixed, test, kDeployRate, threads);
      const double a_deep = accuracy(deep, test, kDeployRate, threads);
      const bool policy_ok = a_uni >= a_fix - kTrendSlack;
      const bool depth_ok = a_deep >= a_uni - kTrendSlack;
      return {policy_ok && depth_ok,
              fmt("at drop 0.9: uniform %.3f vs fixed-0.9 %.3f (%s); two blocks per stage %.3f "
                  "vs one %.3f (%s)",
                  a_uni, a_fix, policy_ok ? "ok" : "uniform below fixed-1pt", a_deep, a_uni,
                  depth_ok ? "ok" : "deeper below shallower-1pt")};
    });

    run(9, "adversarial robustness", [&]() -> Verdict {
      const Model& fixed = need("fixed090", 1, fixed_policy, Objective::Standard);
      const Model& clean = need("clean", 1, DropPolicy::none(), Objective::Standard);
      if (!tau) tau = calibrate_threshold(fixed, data.validation, defense, kFpr, threads);
      const auto attacked = test.first(std::min(kAttacked, test.size()));
      DefenseConfig plain;
      plain.n_samples = 1;
      plain.drop_rate = 0.0;
      plain.seed = kSeed + 1;
      struct Row {
        Norm norm;
        AccuracyReport defended, gated, undefended;
      };
      // Best-of over losses and goals per norm: the defended ensemble with EOT
      // attacks vs the clean-trained model attacked directly.
      auto compare = [&](const EvalConfig& ec) {
        std::vector<AttackConfig> on_defended, on_plain;
        std::vector<Norm> row_norm;
        for (Norm norm : ec.norms)
          for (LossKind loss : ec.losses)
            for (Goal goal : ec.goals) {
              on_defended.push_back(ec.attack(norm, loss, goal, kSide, kDeployRate, kSeed + 3));
              on_plain.push_back(ec.attack(norm, loss, goal, kSide, 0.0, kSeed + 3));
              row_norm.push_back(norm);
            }
        const auto t0 = std::chrono::steady_clock::now();
        const DecisionTable dt = defend_decisions(fixed, attacked, on_defended, defense, threads);
        note(fmt("%s defended attacks took %.0f s", ec.preset.c_str(), elapsed_s(t0)));
        const DecisionTable pt = defend_decisions(clean, attacked, on_plain, plain, threads);
        const OutcomeTable open = outcomes_at(dt, attacked, std::nullopt);
        const OutcomeTable gated = outcomes_at(dt, attacked, tau);
        const OutcomeTable undefended = outcomes_at(pt, attacked, std::nullopt);
        std::vector<Row> out;
        for (Norm norm : ec.norms) {
          std::vector<std::size_t> rows;
          for (std::size_t i = 0; i < row_norm.size(); ++i)
            if (row_norm[i] == norm) rows.push_back(i);
          out.push_back({norm, summarize(open, rows), summarize(gated, rows),
                         summarize(undefended, rows)});
        }
        return out;
      };

      EvalConfig ec;
      ec.eot_samples = kEnsemble;
      bool pass = true;
      std::string detail;
      double l0_gain = 0;
      for (const Row& r : compare(ec)) {
        pass = pass && r.defended.adv_acc - r.undefended.adv_acc >= kRobustMargin;
        if (r.norm == Norm::L0) l0_gain = r.gated.adv_acc - r.defended.adv_acc;
        detail += fmt("%s defended %.2f (with rejection %.2f) vs undefended %.2f; ",
                      to_string(r.norm).c_str(), r.defended.adv_acc, r.gated.adv_acc,
                      r.undefended.adv_acc);
      }
      // Context only: the larger traffic-sign radii, where the clean-trained
      // model is no longer robust on its own.
      EvalConfig wide = ec;
      wide.preset = "gtsrb";
      wide.norms = {Norm::L2, Norm::Linf};
      std::string context = "; for context, at traffic-sign radii:";
      for (const Row& r : compare(wide))
        context += fmt(" %s %.2f vs %.2f", to_string(r.norm).c_str(), r.defended.adv_acc,
                       r.undefended.adv_acc);
      // Clean cost of rejection, measured on the whole test split.
      const DecisionTable ct{ensemble_predict(fixed, test, defense, threads), {}};
      const AccuracyReport c_open = summarize(outcomes_at(ct, test, std::nullopt), {});
      const AccuracyReport c_gated = summarize(outcomes_at(ct, test, tau), {});
      const double cost = c_open.clean_acc - c_gated.clean_acc;
      pass = pass && l0_gain > cost && cost <= kMaxCleanCost;
      detail += fmt("rejection gains %.3f L0 adversarial accuracy at a clean cost of %.4f "
                    "(%zu test images)",
                    l0_gain, cost, test.size());
      return {pass, detail + context};
    });

    run(10, "dual objectives", [&]() -> Verdict {
      const Model& fixed = need("fixed090", 1, fixed_policy, Objective::Standard);
      const Model& a = need("dual_originals", 1, fixed_policy, Objective::DualUniformOriginals);
      const Model& b = need("dual_noisy", 1, fixed_policy, Objective::DualUniformNoisy);
      const double base = accuracy(fixed, test, kDeployRate, threads);
      const double acc_a = accuracy(a, test, kDeployRate, threads);
      const double acc_b = accuracy(b, test, kDeployRate, threads);
      return {base - acc_a <= kDualGap && base - acc_b <= kDualGap,
              fmt("at drop 0.9: plain %.3f, uniform-on-originals %.3f, uniform-on-noisy %.3f "
                  "(allowed gap %.2f)",
                  base, acc_a, acc_b, kDualGap)};
    });

    run(11, "first-layer filters", [&]() -> Verdict {
      const Model& fixed = need("fixed090", 1, fixed_policy, Objective::Standard);
      const Model& clean = need("clean", 1, DropPolicy::none(), Objective::Standard);
      auto mean_of = [](const Model& m) {
        const auto c = export_filters(make_checkpoint(m)).concentration;
        return std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
      };
      const double f = mean_of(fixed), c = mean_of(clean);
      return {f > c, fmt("mean center concentration: fixed-0.9 %.4f, clean %.4f", f, c)};
    });
  }

  run(12, "reproducibility", [&] { return reproducibility(work); });

  note(fmt("total %.0f s", elapsed_s(start)));
  int failed = 0;
  for (const auto& [id, v] : verdicts) {
    std::printf("C%-2d %s  %s\n", id, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    failed += !v.pass;
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
