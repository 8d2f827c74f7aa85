// SPDX-FileCopyrightText: © 2026 The spikedriven authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "sdt/train.hpp"

using sdt::ModelConfig;
using sdt::Tensor;

namespace {

ModelConfig small(std::size_t d = 8, std::size_t heads = 2, std::size_t classes = 4) {
  ModelConfig c = ModelConfig::standard(1, d, heads);
  c.timesteps = 2;
  c.height = c.width = 32;
  c.num_classes = classes;
  return c;
}

std::vector<std::size_t> all_indices(const sdt::Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

TEST(SynthDataset, Deterministic) {
  for (auto kind : {sdt::SynthKind::Stripes, sdt::SynthKind::Blobs, sdt::SynthKind::XorPatch}) {
    auto a = sdt::synth_dataset(kind, 10, {3, 32, 32}, 1);
    auto b = sdt::synth_dataset(kind, 10, {3, 32, 32}, 1);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a.samples[i].image, b.samples[i].image);
      EXPECT_EQ(a.samples[i].label, b.samples[i].label);
    }
    EXPECT_NO_THROW(a.validate());
  }
}

TEST(SynthDataset, EmptyIsValidButNotTrainable) {
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 0, {3, 32, 32}, 1);
  EXPECT_TRUE(ds.empty());
  auto m = sdt::build_model(small(), 1);
  sdt::TrainState<float> st;
  EXPECT_THROW(sdt::fit(m, ds, sdt::TrainConfig{}, st), sdt::Error);
  EXPECT_THROW(sdt::evaluate(m, ds), sdt::Error);
}

TEST(SynthDataset, RejectsBadGeometry) {
  EXPECT_THROW(sdt::synth_dataset(sdt::SynthKind::Blobs, 2, {3, 30, 32}, 1), sdt::Error);
  EXPECT_THROW(sdt::synth_dataset(sdt::SynthKind::XorPatch, 2, {3, 32, 32}, 1, 4), sdt::Error);
  EXPECT_THROW(sdt::parse_synth_kind("spirals"), sdt::Error);
}

TEST(SynthDataset, StripesNearestNeighborBeatsChance) {
  auto train = sdt::synth_dataset(sdt::SynthKind::Stripes, 30, {1, 32, 32}, 1);
  auto test = sdt::synth_dataset(sdt::SynthKind::Stripes, 20, {1, 32, 32}, 2);
  std::size_t correct = 0;
  for (const auto& q : test.samples) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t label = 0;
    for (const auto& r : train.samples) {
      double d = 0;
      for (std::size_t i = 0; i < q.image.size(); ++i) d += std::pow(q.image[i] - r.image[i], 2);
      if (d < best) best = d, label = r.label;
    }
    correct += label == q.label;
  }
  // Chance is 1/4; three standard deviations above it for n = 80 is 0.40.
  EXPECT_GT(static_cast<double>(correct) / test.size(), 0.40);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  Tensor<double> logits({4, 4}, 0.3);
  std::vector<std::size_t> labels{0, 1, 2, 3};
  auto r = sdt::cross_entropy(logits, labels);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_NEAR(r.grad[i], (0.25 - (i % 5 == 0 ? 1.0 : 0.0)) / 4, 1e-12);
}

TEST(CrossEntropy, ModelWithUniformLogits) {
  auto m = sdt::build_model(small(), 1);
  m.head.weight.value.fill(0.0f);
  m.head.bias.value.fill(0.0f);
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 1, {3, 32, 32}, 1);
  auto idx = all_indices(ds);
  sdt::TrainState<float> st;
  sdt::TrainConfig cfg;
  auto r = sdt::train_step(m, sdt::make_batch<float>(ds, idx, 2), sdt::labels_of(ds, idx), cfg, st, 0.0);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersUnchanged) {
  auto m = sdt::build_model(small(), 3);
  const auto before = sdt::build_model(small(), 3);
  auto ds = sdt::synth_dataset(sdt::SynthKind::Blobs, 2, {3, 32, 32}, 1);
  auto idx = all_indices(ds);
  sdt::TrainState<float> st;
  auto r = sdt::train_step(m, sdt::make_batch<float>(ds, idx, 2), sdt::labels_of(ds, idx), sdt::TrainConfig{}, st, 0.0);
  EXPECT_TRUE(std::isfinite(r.loss));
  auto a = m.parameters();
  auto b = before.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
}

TEST(TrainStep, NonFiniteLossNamesLayer) {
  auto m = sdt::build_model(small(), 3);
  m.head.bias.value[0] = std::numeric_limits<float>::infinity();
  auto ds = sdt::synth_dataset(sdt::SynthKind::Blobs, 1, {3, 32, 32}, 1);
  auto idx = all_indices(ds);
  sdt::TrainState<float> st;
  try {
    sdt::train_step(m, sdt::make_batch<float>(ds, idx, 2), sdt::labels_of(ds, idx), sdt::TrainConfig{}, st, 0.1);
    FAIL() << "expected NumericError";
  } catch (const sdt::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("head"), std::string::npos) << e.what();
  }
}

TEST(TrainStep, BitReproducible) {
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 4, {3, 32, 32}, 5);
  sdt::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  auto run = [&] {
    auto m = sdt::build_model(small(), 7);
    sdt::TrainState<float> st;
    auto s = sdt::fit(m, ds, cfg, st);
    return std::make_pair(s.log.back().loss, m.head.weight.value);
  };
  EXPECT_EQ(run(), run());
}

TEST(LearningRate, CosineSchedule) {
  sdt::TrainConfig cfg;
  cfg.learning_rate = 0.2;
  EXPECT_DOUBLE_EQ(sdt::learning_rate_at(cfg, 0, 100), 0.2);
  EXPECT_NEAR(sdt::learning_rate_at(cfg, 50, 100), 0.1, 1e-12);
  EXPECT_NEAR(sdt::learning_rate_at(cfg, 100, 100), 0.0, 1e-12);
  cfg.lr_schedule = sdt::LrSchedule::Constant;
  EXPECT_DOUBLE_EQ(sdt::learning_rate_at(cfg, 70, 100), 0.2);
}

TEST(TrainConfig, Validation) {
  sdt::TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), sdt::Error);
  c = {};
  c.loss = "mse";
  EXPECT_THROW(c.validate(), sdt::Error);
}

TEST(Fit, LossDecreasesAndAttentionReceivesGradient) {
  ModelConfig c = small(16, 4);
  c.timesteps = 4;
  auto m = sdt::build_model(c, 11);
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 16, {3, 32, 32}, 3);
  sdt::TrainConfig cfg;
  cfg.epochs = 13;  // 64 samples / batch 4 = 16 steps per epoch, 208 steps
  cfg.batch_size = 4;
  cfg.learning_rate = 0.05;
  sdt::TrainState<float> st;
  auto s = sdt::fit(m, ds, cfg, st);
  ASSERT_GE(s.log.size(), 200u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += s.log[i].loss;
    tail += s.log[s.log.size() - 1 - i].loss;
  }
  EXPECT_LT(tail, head);
  EXPECT_TRUE(s.dead_attention_blocks.empty());
}

TEST(Evaluate, SingleCorrectSample) {
  auto m = sdt::build_model(small(), 1);
  m.head.weight.value.fill(0.0f);
  m.head.bias.value.fill(0.0f);
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 1, {3, 32, 32}, 1);
  ds.samples.resize(1);
  m.head.bias.value[ds.samples[0].label] = 1.0f;
  EXPECT_DOUBLE_EQ(sdt::evaluate(m, ds), 1.0);
}

TEST(Evaluate, RandomModelNearChance) {
  auto m = sdt::build_model(small(), 21);
  auto ds = sdt::synth_dataset(sdt::SynthKind::Stripes, 50, {3, 32, 32}, 4);
  const double acc = sdt::evaluate(m, ds);
  const double sigma = std::sqrt(0.25 * 0.75 / ds.size());
  EXPECT_NEAR(acc, 0.25, 3 * sigma);
}

class GradCheck : public ::testing::Test {
 protected:
  ModelConfig cfg = small(8, 2, 3);
  Tensor<double> images;
  std::vector<std::size_t> labels;

  void SetUp() override {
    auto ds = sdt::synth_dataset(sdt::SynthKind::Blobs, 1, {3, 32, 32}, 9, 3);
    std::vector<std::size_t> idx{0, 1};
    images = sdt::make_batch<double>(ds, idx, cfg.timesteps);
    labels = sdt::labels_of(ds, idx);
  }
};

TEST_F(GradCheck, RandomTinyModelPasses) {
  auto m = sdt::build_model<double>(cfg, 31);
  auto rep = sdt::grad_check(m, images, labels);
  for (const auto& g : rep.groups)
    EXPECT_TRUE(g.passed) << g.name << " rel " << g.rel_error << " excluded " << g.excluded;
  EXPECT_GE(rep.cosine, 0.99);
}

TEST_F(GradCheck, ZeroWeightsPassTrivially) {
  auto m = sdt::build_model<double>(cfg, 31);
  for (auto* p : m.parameters())
    if (p->name.ends_with(".weight") && p->value.rank() > 1) p->value.fill(0.0);
  auto rep = sdt::grad_check(m, images, labels);
  EXPECT_TRUE(rep.passed);
  bool any_trivial = false;
  for (const auto& g : rep.groups) any_trivial |= g.trivial;
  EXPECT_TRUE(any_trivial);
}

TEST_F(GradCheck, KinkCrossingsAreExcluded) {
  auto m = sdt::build_model<double>(cfg, 31);
  sdt::GradCheckOptions opt;
  opt.step = 0.05;  // large enough to push pre-activations across window edges
  auto rep = sdt::grad_check(m, images, labels, opt);
  EXPECT_GT(rep.excluded, 0u);
}
