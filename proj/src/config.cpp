// SPDX-License-Identifier: Apache-2.0
#include "pxdrop/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "pxdrop/text.hpp"

namespace pxdrop {

namespace {

template <typename T>
T parse_integer(const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError("expected an integer, got '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("expected true|false, got '" + text + "'");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& text, F parse_one) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  for (const auto& piece : split_trimmed(text, ',')) out.push_back(parse_one(piece));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F render_one) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + render_one(items[i]);
  return out;
}

std::string render_bool(bool v) { return v ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

NormOverride& override_for(ExperimentConfig& c, Norm n) { return c.eval.overrides[n]; }

AttackConfig preset_for(const ExperimentConfig& c, Norm n) {
  return attack_defaults(c.eval.preset, n, c.dataset.side);
}

void add_norm_fields(std::vector<Field>& fields, Norm norm) {
  const std::string prefix = "attack." + to_string(norm) + ".";
  fields.push_back(
      {prefix + "eps",
       [norm](ExperimentConfig& c, const std::string& v) {
         override_for(c, norm).eps =
             trim(v).empty() ? std::nullopt : std::optional<double>(parse_number(v));
       },
       [norm](const ExperimentConfig& c) {
         const auto it = c.eval.overrides.find(norm);
         return format_number(it != c.eval.overrides.end() && it->second.eps
                                  ? *it->second.eps
                                  : preset_for(c, norm).eps);
       }});
  fields.push_back(
      {prefix + "step",
       [norm](ExperimentConfig& c, const std::string& v) {
         override_for(c, norm).step =
             trim(v).empty() ? std::nullopt : std::optional<double>(parse_number(v));
       },
       [norm](const ExperimentConfig& c) {
         const auto it = c.eval.overrides.find(norm);
         return format_number(it != c.eval.overrides.end() && it->second.step
                                  ? *it->second.step
                                  : preset_for(c, norm).step);
       }});
  fields.push_back(
      {prefix + "iterations",
       [norm](ExperimentConfig& c, const std::string& v) {
         override_for(c, norm).iterations =
             trim(v).empty() ? std::nullopt : std::optional<int>(parse_integer<int>(v));
       },
       [norm](const ExperimentConfig& c) {
         const auto it = c.eval.overrides.find(norm);
         return std::to_string(it != c.eval.overrides.end() && it->second.iterations
                                   ? *it->second.iterations
                                   : preset_for(c, norm).iterations);
       }});
}

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back({"seed",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.seed = parse_integer<std::uint64_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.seed); }});
    f.push_back({"output.dir",
                 [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
                 [](const ExperimentConfig& c) { return c.out_dir.string(); }});

    f.push_back({"dataset.kind",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v != "synth" && v != "cifar10")
                     throw ConfigError("expected synth|cifar10, got '" + v + "'");
                   c.dataset.kind = v;
                 },
                 [](const ExperimentConfig& c) { return c.dataset.kind; }});
    f.push_back({"dataset.path",
                 [](ExperimentConfig& c, const std::string& v) { c.dataset.path = v; },
                 [](const ExperimentConfig& c) { return c.dataset.path.string(); }});
    f.push_back({"dataset.n_per_class",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.dataset.n_per_class = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.dataset.n_per_class); }});
    f.push_back({"dataset.num_classes",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.dataset.num_classes = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.dataset.num_classes); }});
    f.push_back({"dataset.side",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.dataset.side = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.dataset.side); }});
    f.push_back({"dataset.fractions",
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto parts = parse_list<double>(v, parse_number);
                   if (parts.size() != 3)
                     throw ConfigError("expected three fractions train,validation,test");
                   c.dataset.fractions = {parts[0], parts[1], parts[2]};
                 },
                 [](const ExperimentConfig& c) {
                   return format_number(c.dataset.fractions[0]) + "," +
                          format_number(c.dataset.fractions[1]) + "," +
                          format_number(c.dataset.fractions[2]);
                 }});

    f.push_back({"model.id", [](ExperimentConfig& c, const std::string& v) { c.model_id = v; },
                 [](const ExperimentConfig& c) { return c.model_id; }});
    f.push_back({"model.depth",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.model.depth = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.model.depth); }});
    f.push_back({"model.widths",
                 [](ExperimentConfig& c, const std::string& v) {
                   const auto w = parse_list<int>(v, parse_integer<int>);
                   if (w.size() != 3) throw ConfigError("expected three stage widths");
                   c.model.widths = {w[0], w[1], w[2]};
                 },
                 [](const ExperimentConfig& c) {
                   return std::to_string(c.model.widths[0]) + "," +
                          std::to_string(c.model.widths[1]) + "," +
                          std::to_string(c.model.widths[2]);
                 }});

    f.push_back({"train.epochs",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.epochs = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.train.epochs); }});
    f.push_back({"train.batch_size",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.batch_size = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.train.batch_size); }});
    f.push_back({"train.lr",
                 [](ExperimentConfig& c, const std::string& v) { c.train.base_lr = parse_number(v); },
                 [](const ExperimentConfig& c) { return format_number(c.train.base_lr); }});
    f.push_back({"train.schedule",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.schedule = parse_list<LrStep>(v, [](const std::string& item) {
                     const auto parts = split_trimmed(item, ':');
                     if (parts.size() != 2)
                       throw ConfigError("schedule entries are epoch:lr, got '" + item + "'");
                     return LrStep{parse_integer<int>(parts[0]), parse_number(parts[1])};
                   });
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.train.resolved_schedule(), [](const LrStep& s) {
                     return std::to_string(s.epoch) + ":" + format_number(s.lr);
                   });
                 }});
    f.push_back({"train.momentum",
                 [](ExperimentConfig& c, const std::string& v) { c.train.momentum = parse_number(v); },
                 [](const ExperimentConfig& c) { return format_number(c.train.momentum); }});
    f.push_back({"train.weight_decay",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.weight_decay = parse_number(v);
                 },
                 [](const ExperimentConfig& c) { return format_number(c.train.weight_decay); }});
    f.push_back({"train.policy",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.policy.kind = parse_drop_kind(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.train.policy.kind); }});
    f.push_back({"train.rate",
                 [](ExperimentConfig& c, const std::string& v) { c.train.policy.rate = parse_number(v); },
                 [](const ExperimentConfig& c) { return format_number(c.train.policy.rate); }});
    f.push_back({"train.granularity",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.policy.granularity = parse_granularity(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.train.policy.granularity); }});
    f.push_back({"train.objective",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.objective = parse_objective(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.train.objective); }});
    f.push_back({"train.noise_eps",
                 [](ExperimentConfig& c, const std::string& v) { c.train.noise_eps = parse_number(v); },
                 [](const ExperimentConfig& c) { return format_number(c.train.noise_eps); }});
    f.push_back({"train.dual_weight",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.dual_weight = parse_number(v);
                 },
                 [](const ExperimentConfig& c) { return format_number(c.train.dual_weight); }});
    f.push_back({"train.val_limit",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.val_limit = parse_integer<std::size_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.train.val_limit); }});
    f.push_back({"train.val_trials",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.train.val_trials = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.train.val_trials); }});

    f.push_back({"attack.preset",
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v != "cifar10" && v != "gtsrb")
                     throw ConfigError("expected cifar10|gtsrb, got '" + v + "'");
                   c.eval.preset = v;
                 },
                 [](const ExperimentConfig& c) { return c.eval.preset; }});
    f.push_back({"attack.norms",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.norms = parse_list<Norm>(v, parse_norm);
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.eval.norms, [](Norm n) { return to_string(n); });
                 }});
    f.push_back({"attack.losses",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.losses = parse_list<LossKind>(v, parse_loss);
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.eval.losses, [](LossKind l) { return to_string(l); });
                 }});
    f.push_back({"attack.goals",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.goals = parse_list<Goal>(v, parse_goal);
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.eval.goals, [](Goal g) { return to_string(g); });
                 }});
    f.push_back({"attack.target",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.target = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval.target); }});
    f.push_back({"attack.eot_samples",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.eot_samples = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval.eot_samples); }});
    f.push_back({"attack.eot_drop_rate",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.eot_drop_rate = parse_number(v);
                 },
                 [](const ExperimentConfig& c) { return format_number(c.eval.eot_drop_rate); }});
    f.push_back({"attack.random_start",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.random_start = parse_bool(v);
                 },
                 [](const ExperimentConfig& c) { return render_bool(c.eval.random_start); }});
    add_norm_fields(f, Norm::L0);
    add_norm_fields(f, Norm::L2);
    add_norm_fields(f, Norm::Linf);

    f.push_back({"defense.drop_rates",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.drop_rates = parse_list<double>(v, parse_number);
                 },
                 [](const ExperimentConfig& c) {
                   return join(c.eval.drop_rates, [](double r) { return format_number(r); });
                 }});
    f.push_back({"defense.n_samples",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.n_samples = parse_integer<int>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval.n_samples); }});
    f.push_back({"defense.granularity",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.granularity = parse_granularity(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.eval.granularity); }});
    f.push_back({"defense.reject",
                 [](ExperimentConfig& c, const std::string& v) { c.eval.reject = parse_bool(v); },
                 [](const ExperimentConfig& c) { return render_bool(c.eval.reject); }});
    f.push_back({"defense.fpr",
                 [](ExperimentConfig& c, const std::string& v) { c.eval.fpr = parse_number(v); },
                 [](const ExperimentConfig& c) { return format_number(c.eval.fpr); }});
    f.push_back({"defense.calibration_limit",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.calibration_limit = parse_integer<std::size_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval.calibration_limit); }});
    f.push_back({"eval.limit",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.eval.limit = parse_integer<std::size_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.eval.limit); }});

    f.push_back({"explain.count",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.explain.count = parse_integer<std::size_t>(v);
                 },
                 [](const ExperimentConfig& c) { return std::to_string(c.explain.count); }});
    f.push_back({"explain.target",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.explain.target = parse_map_target(v);
                 },
                 [](const ExperimentConfig& c) { return to_string(c.explain.target); }});
    f.push_back({"explain.drop_rate",
                 [](ExperimentConfig& c, const std::string& v) {
                   c.explain.drop_rate = parse_number(v);
                 },
                 [](const ExperimentConfig& c) { return format_number(c.explain.drop_rate); }});
    return f;
  }();
  return fields;
}

// Semantic checks that span several fields.
void check_values(const ExperimentConfig& c, std::vector<std::string>& errors) {
  const auto guard = [&](const char* what, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      errors.push_back(std::string(what) + ": " + e.what());
    }
  };
  if (c.dataset.kind == "cifar10") {
    if (c.dataset.path.empty())
      errors.push_back("dataset.path: required for cifar10");
    else if (!std::filesystem::is_directory(c.dataset.path))
      errors.push_back("dataset.path: directory '" + c.dataset.path.string() + "' does not exist");
  } else {
    if (c.dataset.num_classes < 2 || c.dataset.num_classes > 16)
      errors.push_back("dataset.num_classes: must lie in [2, 16]");
    if (c.dataset.side < 16) errors.push_back("dataset.side: must be >= 16");
    if (c.dataset.n_per_class < 1) errors.push_back("dataset.n_per_class: must be >= 1");
  }
  const double fsum = c.dataset.fractions[0] + c.dataset.fractions[1] + c.dataset.fractions[2];
  if (std::abs(fsum - 1.0) > 1e-9) errors.push_back("dataset.fractions: must sum to 1");
  guard("model", [&] { c.model.validate(); });
  guard("train", [&] { c.train.validate(); });
  for (double r : c.eval.drop_rates)
    if (!(r >= 0.0 && r <= 1.0)) errors.push_back("defense.drop_rates: values must lie in [0, 1]");
  if (c.eval.n_samples < 1) errors.push_back("defense.n_samples: must be >= 1");
  if (!(c.eval.fpr > 0.0 && c.eval.fpr < 1.0)) errors.push_back("defense.fpr: must lie in (0, 1)");
  if (c.eval.limit < 1) errors.push_back("eval.limit: must be >= 1");
  if (c.eval.target >= c.model.num_classes)
    errors.push_back("attack.target: class out of range");
  if (!(c.explain.drop_rate >= 0.0 && c.explain.drop_rate <= 1.0))
    errors.push_back("explain.drop_rate: must lie in [0, 1]");
  for (Norm n : {Norm::L0, Norm::L2, Norm::Linf})
    guard(("attack." + to_string(n)).c_str(), [&] {
      c.eval.attack(n, LossKind::CrossEntropy, Goal::Misclassify, c.dataset.side, 0.5, c.seed)
          .validate();
    });
}

}  // namespace

double parse_number(const std::string& raw) {
  const std::string text = trim(raw);
  const auto slash = text.find('/');
  if (slash != std::string::npos)
    return parse_number(text.substr(0, slash)) / parse_number(text.substr(slash + 1));
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size() || text.empty())
    throw ConfigError("expected a number, got '" + text + "'");
  return value;
}

AttackConfig EvalConfig::attack(Norm norm, LossKind loss, Goal goal, int side, double drop_rate,
                                std::uint64_t seed) const {
  AttackConfig a = attack_defaults(preset, norm, side);
  if (const auto it = overrides.find(norm); it != overrides.end()) {
    if (it->second.eps) a.eps = *it->second.eps;
    if (it->second.step) a.step = *it->second.step;
    if (it->second.iterations) a.iterations = *it->second.iterations;
  }
  a.loss = loss;
  a.goal = goal;
  a.target = target;
  a.eot_samples = drop_rate > 0.0 ? eot_samples : 0;
  a.eot_drop_rate = drop_rate;
  a.eot_granularity = granularity;
  a.random_start = random_start;
  a.seed = seed;
  return a;
}

ExperimentConfig parse_experiment(const std::string& text) {
  ExperimentConfig config;
  std::vector<std::string> errors;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto where = "line " + std::to_string(number) + ": ";
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      errors.push_back(where + "expected 'key = value'");
      continue;
    }
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    if (!seen.insert(key).second) {
      errors.push_back(where + "duplicate key '" + key + "'");
      continue;
    }
    const auto& fields = schema();
    const auto field = std::find_if(fields.begin(), fields.end(),
                                    [&](const Field& f) { return f.key == key; });
    if (field == fields.end()) {
      errors.push_back(where + "unknown key '" + key + "'");
      continue;
    }
    try {
      field->set(config, value);
    } catch (const Error& e) {
      errors.push_back(where + key + ": " + e.what());
    }
  }
  if (!seen.count("seed"))
    errors.push_back("seed: missing; every experiment must name its seed explicitly");

  if (config.dataset.kind == "cifar10") {
    config.model.num_classes = 10;
    config.model.input_side = 32;
    config.dataset.num_classes = 10;
    config.dataset.side = 32;
  } else {
    config.model.num_classes = config.dataset.num_classes;
    config.model.input_side = config.dataset.side;
  }
  config.train.seed = config.seed;
  check_values(config, errors);
  if (!errors.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                      (errors.size() == 1 ? "" : "s") + "):";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return config;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment(text.str());
}

std::string render_experiment(const ExperimentConfig& config) {
  std::string out;
  for (const auto& field : schema()) out += field.key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace pxdrop
