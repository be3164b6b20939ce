// SPDX-License-Identifier: Apache-2.0
//
// pxdrop: train, attack, evaluate and inspect subsampling-defended classifiers.
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "pxdrop/experiment.hpp"
#include "pxdrop/error.hpp"

namespace {

struct Flags {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_flags(CLI::App* cmd, Flags& flags, bool needs_checkpoint) {
  cmd->add_option("--config", flags.config, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  if (needs_checkpoint)
    cmd->add_option("--checkpoint", flags.checkpoint,
                    "checkpoint to load (default: <out>/checkpoint.pxd)");
  cmd->add_option("--out", flags.out, "output directory (overrides output.dir)");
  cmd->add_option("--seed", flags.seed, "experiment seed (overrides seed)");
  cmd->add_option("--threads", flags.threads, "worker threads")
      ->check(CLI::Range(1, 256))
      ->capture_default_str();
}

pxdrop::CommandOptions to_options(const CLI::App* cmd, const Flags& flags) {
  pxdrop::CommandOptions o;
  o.config = flags.config;
  const CLI::Option* checkpoint = cmd->get_option_no_throw("--checkpoint");
  if (checkpoint != nullptr && checkpoint->count() > 0) o.checkpoint = flags.checkpoint;
  if (cmd->count("--out") > 0) o.out = flags.out;
  if (cmd->count("--seed") > 0) o.seed = flags.seed;
  o.threads = flags.threads;
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-subsampling defenses: training, attacks, evaluation and introspection"};
  app.require_subcommand(1);

  using Command = std::function<void(const pxdrop::CommandOptions&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands{
      {"train", {"train a model and write checkpoint.pxd and metrics.csv", pxdrop::cmd_train}},
      {"attack", {"run the configured attacks and export adversarial examples", pxdrop::cmd_attack}},
      {"eval", {"evaluate the subsampling ensemble under attack; writes results.csv",
                pxdrop::cmd_eval}},
      {"explain", {"write explanation maps for subsampled test images", pxdrop::cmd_explain}},
      {"filters", {"export first-layer filters and their concentration scores",
                   pxdrop::cmd_filters}},
  };

  std::map<std::string, Flags> flags;
  for (const auto& [name, entry] : commands) {
    CLI::App* cmd = app.add_subcommand(name, entry.first);
    add_flags(cmd, flags[name], name != "train");
  }

  CLI11_PARSE(app, argc, argv);

  for (const auto& [name, entry] : commands) {
    const CLI::App* cmd = app.get_subcommand(name);
    if (!cmd->parsed()) continue;
    try {
      entry.second(to_options(cmd, flags[name]));
      return 0;
    } catch (const pxdrop::ConfigError& e) {
      std::fprintf(stderr, "pxdrop %s: configuration error:\n%s\n", name.c_str(), e.what());
      return 2;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "pxdrop %s: %s\n", name.c_str(), e.what());
      return 1;
    }
  }
  return 1;
}
