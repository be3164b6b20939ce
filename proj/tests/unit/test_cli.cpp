// SPDX-License-Identifier: Apache-2.0
// End-to-end runs of the commands on a tiny synthetic experiment.
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "pxdrop/defense.hpp"
#include "pxdrop/experiment.hpp"
#include "pxdrop/introspect.hpp"
#include "test_util.hpp"

namespace pxdrop {
namespace {

namespace fs = std::filesystem;

const char* kTinyConfig = R"(seed = 11
output.dir = unused

dataset.kind = synth
dataset.n_per_class = 30
dataset.num_classes = 4
dataset.side = 16

model.id = tiny
model.widths = 4,8,8

train.epochs = 2
train.batch_size = 32
train.policy = uniform
train.val_limit = 16

attack.norms = l0,l2,linf
attack.eot_samples = 1
attack.l2.iterations = 2
attack.linf.iterations = 2

defense.drop_rates = 0,0.5,0.9
defense.n_samples = 2
defense.fpr = 0.2

eval.limit = 6
explain.count = 2
)";

std::size_t count_lines(const std::string& text) {
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(PXDROP_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Commands : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    std::ofstream(dir_->path() / "tiny.cfg") << kTinyConfig;
    cmd_train(options("run"));
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static CommandOptions options(const std::string& out) {
    CommandOptions o;
    o.config = dir_->path() / "tiny.cfg";
    o.out = dir_->path() / out;
    return o;
  }
  static fs::path run_dir() { return dir_->path() / "run"; }

  static testing::TempDir* dir_;
};

testing::TempDir* Commands::dir_ = nullptr;

TEST_F(Commands, TrainWritesArtifactsAndResolvedConfig) {
  for (const char* f : {"checkpoint.pxd", "metrics.csv", "resolved_config.txt"})
    EXPECT_TRUE(fs::exists(run_dir() / f)) << f;
  EXPECT_EQ(count_lines(testing::read_file(run_dir() / "metrics.csv")), 3u);
  // The resolved config replays the run.
  const auto resolved = load_experiment(run_dir() / "resolved_config.txt");
  EXPECT_EQ(resolved.out_dir, run_dir());
  EXPECT_EQ(render_experiment(resolved), testing::read_file(run_dir() / "resolved_config.txt"));
}

TEST_F(Commands, TrainRerunIsByteIdentical) {
  cmd_train(options("again"));
  for (const char* f : {"checkpoint.pxd", "metrics.csv"})
    EXPECT_EQ(testing::read_file(run_dir() / f), testing::read_file(dir_->path() / "again" / f))
        << f;
}

TEST_F(Commands, SeedOverrideChangesTheRun) {
  CommandOptions o = options("reseeded");
  o.seed = 12;
  cmd_train(o);
  EXPECT_NE(testing::read_file(run_dir() / "checkpoint.pxd"),
            testing::read_file(dir_->path() / "reseeded" / "checkpoint.pxd"));
  EXPECT_NE(testing::read_file(dir_->path() / "reseeded" / "resolved_config.txt").find("seed = 12"),
            std::string::npos);
}

TEST_F(Commands, EvalGridHasAtLeastOneRowPerCell) {
  CommandOptions o = options("run");
  o.checkpoint = run_dir() / "checkpoint.pxd";
  cmd_eval(o);
  const std::string first = testing::read_file(run_dir() / "results.csv");
  EXPECT_EQ(first.substr(0, first.find('\n')), kResultsHeader);
  EXPECT_GE(count_lines(first) - 1, 9u);
  cmd_eval(o);
  EXPECT_EQ(testing::read_file(run_dir() / "results.csv"), first);
}

TEST_F(Commands, AttackExportsEveryCombination) {
  CommandOptions o = options("run");
  cmd_attack(o);
  std::size_t bundles = 0;
  for (const auto& e : fs::directory_iterator(run_dir()))
    bundles += e.path().filename().string().rfind("adv_", 0) == 0 && e.path().extension() == ".pxd";
  EXPECT_EQ(bundles, 3u * 2 * 2);
  EXPECT_TRUE(fs::exists(run_dir() / "adv_linf_cw_targeted.csv"));
  EXPECT_EQ(count_lines(testing::read_file(run_dir() / "adv_l0_ce_misclassify.csv")), 7u);
}

TEST_F(Commands, FiltersWriteOnePpmPerFilter) {
  cmd_filters(options("run"));
  std::size_t ppm = 0;
  for (const auto& e : fs::directory_iterator(run_dir() / "filters")) ppm += e.path().extension() == ".ppm";
  EXPECT_EQ(ppm, 4u);
}

TEST_F(Commands, ExplainWritesMapsAndSummary) {
  cmd_explain(options("run"));
  const fs::path dir = run_dir() / "explain";
  EXPECT_EQ(count_lines(testing::read_file(dir / "explain_summary.csv")), 3u);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(dir))
    images += e.path().extension() == ".ppm" || e.path().extension() == ".pgm";
  EXPECT_EQ(images, 2u * 5);
}

TEST_F(Commands, MismatchedCheckpointIsAConfigError) {
  std::ofstream(dir_->path() / "wide.cfg")
      << std::string(kTinyConfig) + "model.depth = 2\n";
  CommandOptions o = options("run");
  o.config = dir_->path() / "wide.cfg";
  EXPECT_THROW(cmd_explain(o), ConfigError);
  EXPECT_THROW(cmd_eval(o), ConfigError);
}

TEST_F(Commands, ExitCodes) {
  const std::string cfg = (dir_->path() / "tiny.cfg").string();
  const std::string out = (dir_->path() / "cli_out").string();
  EXPECT_EQ(run_cli("filters --config " + cfg + " --checkpoint " +
                    (run_dir() / "checkpoint.pxd").string() + " --out " + out),
            0);
  EXPECT_TRUE(fs::exists(dir_->path() / "cli_out" / "filters" / "filters_summary.csv"));

  std::ofstream(dir_->path() / "noseed.cfg") << "train.epochs = 1\n";
  EXPECT_EQ(run_cli("train --config " + (dir_->path() / "noseed.cfg").string()), 2);
  EXPECT_EQ(run_cli("filters --config " + cfg + " --checkpoint " + cfg + " --out " + out), 1);
  EXPECT_NE(run_cli("train --config /no/such/file.cfg"), 0);
  EXPECT_NE(run_cli("launch --config " + cfg), 0);
  EXPECT_NE(run_cli("train --config " + cfg + " --threads 0"), 0);
}

}  // namespace
}  // namespace pxdrop
