// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "pxdrop/ops.hpp"
#include "pxdrop/trainer.hpp"
#include "test_util.hpp"

namespace pxdrop {
namespace {

DatasetSplit small_signs(std::size_t per_class = 60, std::uint64_t seed = 1) {
  SynthSignsOptions o;
  o.n_per_class = per_class;
  o.num_classes = 4;
  o.side = 16;
  o.seed = seed;
  return synth_signs(o);
}

ModelSpec small_spec() {
  ModelSpec s;
  s.widths = {4, 8, 8};
  s.num_classes = 4;
  s.input_side = 16;
  return s;
}

std::vector<const ImageRecord*> first_records(const DatasetSplit& d, std::size_t n) {
  std::vector<const ImageRecord*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&d.train[i]);
  return out;
}

TEST(Schedule, DefaultStepsAtHalfAndThreeQuarters) {
  const auto s = default_schedule(8, 0.1);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[1].epoch, 4);
  EXPECT_EQ(s[2].epoch, 6);
  EXPECT_DOUBLE_EQ(lr_at(s, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 3), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 4), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 7), 0.001);
}

TEST(Schedule, ExplicitScheduleWins) {
  TrainConfig c;
  c.schedule = {{0, 0.5}, {2, 0.05}};
  EXPECT_EQ(c.resolved_schedule().size(), 2u);
  EXPECT_DOUBLE_EQ(lr_at(c.resolved_schedule(), 5), 0.05);
  c.schedule = {{2, 0.5}, {1, 0.05}};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, RejectsNonsense) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.noise_eps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_objective("triple"), ConfigError);
  EXPECT_EQ(parse_objective(to_string(Objective::DualUniformNoisy)), Objective::DualUniformNoisy);
}

TEST(SignNoise, PlusMinusOneAndKeyed) {
  const Tensor a = sign_noise({3, 16, 16}, 1, 5, 0);
  double total = 0;
  for (float v : a.values()) {
    ASSERT_TRUE(v == 1.0f || v == -1.0f);
    total += v;
  }
  EXPECT_LT(std::abs(total), 4 * std::sqrt(768.0));
  const Tensor b = sign_noise({3, 16, 16}, 1, 5, 0), c = sign_noise({3, 16, 16}, 1, 5, 1);
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}

TEST(TrainBatch, NoPolicyKeepsEveryPixel) {
  const auto d = small_signs(10);
  TrainConfig c;
  const TrainBatch b = make_train_batch(first_records(d, 8), 16, c, 0);
  EXPECT_EQ(b.clean.shape(), (Shape{8, 3, 16, 16}));
  for (const auto& m : b.masks)
    for (float v : m.bits.values()) ASSERT_EQ(v, 1.0f);
}

TEST(TrainBatch, MasksDependOnIdAndEpochOnly) {
  const auto d = small_signs(10);
  TrainConfig c;
  c.policy = DropPolicy::uniform();
  c.seed = 3;
  const auto recs = first_records(d, 6);
  const TrainBatch a = make_train_batch(recs, 16, c, 2);
  // Same images in a different batch composition.
  const std::vector<const ImageRecord*> reversed(recs.rbegin(), recs.rend());
  const TrainBatch b = make_train_batch(reversed, 16, c, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.masks[i].rate, b.masks[5 - i].rate);
    EXPECT_TRUE(std::equal(a.masks[i].bits.values().begin(), a.masks[i].bits.values().end(),
                           b.masks[5 - i].bits.values().begin()));
  }
  const TrainBatch next = make_train_batch(recs, 16, c, 3);
  EXPECT_NE(a.masks[0].rate, next.masks[0].rate);
}

TEST(Objective, StandardIsCrossEntropyOfTheSubsampledBatch) {
  const auto d = small_signs(10);
  const Model m(small_spec(), 1);
  TrainConfig c;
  c.policy = DropPolicy::fixed(0.5);
  const TrainBatch b = make_train_batch(first_records(d, 8), 16, c, 0);
  const float got = objective_loss(m, b, c, 0).item();
  const float want = cross_entropy(m.forward(apply_masks(b.clean, b.masks), Mode::Train),
                                   b.labels).item();
  EXPECT_FLOAT_EQ(got, want);
}

TEST(Objective, DualTermsAddCrossEntropyToUniform) {
  const auto d = small_signs(10);
  const Model m(small_spec(), 2);
  TrainConfig c;
  c.policy = DropPolicy::fixed(0.9);
  c.dual_weight = 0.5;
  c.seed = 4;
  const TrainBatch b = make_train_batch(first_records(d, 8), 16, c, 1);
  const float standard =
      cross_entropy(m.forward(apply_masks(b.clean, b.masks), Mode::Train), b.labels).item();

  // Uniform-target CE computed by hand: mean over rows of -(1/K) sum log p.
  auto uniform_ce = [&](const Tensor& x) {
    const Tensor lp = log_softmax(m.forward(x, Mode::Train));
    double s = 0;
    for (float v : lp.values()) s -= v;
    return s / static_cast<double>(lp.size(0) * lp.size(1));
  };

  c.objective = Objective::DualUniformOriginals;
  EXPECT_NEAR(objective_loss(m, b, c, 1).item(), standard + 0.5 * uniform_ce(b.clean), 1e-5);

  c.objective = Objective::DualUniformNoisy;
  std::vector<float> noisy(b.clean.values().begin(), b.clean.values().end());
  for (std::size_t i = 0; i < b.ids.size(); ++i) {
    const Tensor v = sign_noise({3, 16, 16}, c.seed, b.ids[i], 1);
    for (std::size_t j = 0; j < 768; ++j)
      noisy[i * 768 + j] =
          (noisy[i * 768 + j] + static_cast<float>(c.noise_eps) * v.values()[j]) *
          b.masks[i].bits.values()[j];
  }
  const Tensor twin(b.clean.shape(), std::move(noisy));
  EXPECT_NEAR(objective_loss(m, b, c, 1).item(), standard + 0.5 * uniform_ce(twin), 1e-5);
}

TEST(Objective, RunningStatisticsOnlySeeTheSubsampledView) {
  const auto d = small_signs(10);
  TrainConfig c;
  c.policy = DropPolicy::fixed(0.9);
  const TrainBatch b = make_train_batch(first_records(d, 8), 16, c, 0);
  const Model standard(small_spec(), 2);
  objective_loss(standard, b, c, 0);
  for (Objective o : {Objective::DualUniformOriginals, Objective::DualUniformNoisy}) {
    const Model dual(small_spec(), 2);
    c.objective = o;
    objective_loss(dual, b, c, 0);
    const auto want = standard.named_tensors(), got = dual.named_tensors();
    for (std::size_t i = 0; i < want.size(); ++i)
      ASSERT_TRUE(std::equal(want[i].second.values().begin(), want[i].second.values().end(),
                             got[i].second.values().begin()))
          << to_string(o) << " " << want[i].first;
  }
}

TEST(Train, LearnsSynthSignsWithoutSubsampling) {
  const auto d = small_signs(200, 2);
  Model m(small_spec(), 3);
  TrainConfig c;
  c.epochs = 5;
  c.batch_size = 16;
  c.seed = 5;
  std::vector<EpochMetrics> seen;
  const auto r = train(m, d, c, [&](const EpochMetrics& e) { seen.push_back(e); });
  ASSERT_EQ(seen.size(), 5u);
  EXPECT_EQ(r.metrics.back().epoch, 5);
  EXPECT_LT(r.metrics.back().train_loss, r.metrics.front().train_loss);
  EXPECT_GT(evaluate(m, d.test, 0.0, 1, 0), 0.9);
  EXPECT_EQ(r.checkpoint.metadata.at("policy"), DropPolicy::none().describe());
}

TEST(Train, SameSeedSameCheckpointBytes) {
  const auto d = small_signs(20, 3);
  auto run = [&] {
    Model m(small_spec(), 4);
    TrainConfig c;
    c.epochs = 2;
    c.batch_size = 16;
    c.policy = DropPolicy::uniform();
    c.objective = Objective::DualUniformNoisy;
    c.seed = 6;
    c.val_limit = 20;
    return serialize_bundle(train(m, d, c).checkpoint);
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, MismatchedDatasetIsRefused) {
  const auto d = small_signs(5);
  ModelSpec s = small_spec();
  s.num_classes = 5;
  Model m(s, 0);
  EXPECT_THROW(train(m, d, TrainConfig{}), ConfigError);
}

TEST(Train, DivergenceIsReported) {
  const auto d = small_signs(10);
  Model m(small_spec(), 0);
  TrainConfig c;
  c.epochs = 3;
  c.base_lr = 1e30;
  try {
    train(m, d, c);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("diverged at epoch"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, ThreadCountDoesNotChangePredictions) {
  const auto d = small_signs(40);
  const Model m(small_spec(), 5);
  const auto one = predict(m, d.test, 0.7, 2, 9, Granularity::PerElement, 1);
  const auto many = predict(m, d.test, 0.7, 2, 9, Granularity::PerElement, 3);
  EXPECT_EQ(one, many);
  EXPECT_EQ(evaluate(m, d.test, 0.0, 5, 1), evaluate(m, d.test, 0.0, 1, 2));
  EXPECT_THROW(evaluate(m, {}, 0.0, 1, 0), Error);
}

TEST(Metrics, CsvHeaderAndRows) {
  testing::TempDir dir("metrics");
  const std::vector<EpochMetrics> rows{{1, 0.5, 0.75, 0.25}, {2, 0.25, 1.0, 0.5}};
  write_metrics_csv(dir / "m.csv", rows);
  const std::string text = testing::read_file(dir / "m.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,train_loss,val_acc_clean,val_acc_drop90");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

}  // namespace
}  // namespace pxdrop
