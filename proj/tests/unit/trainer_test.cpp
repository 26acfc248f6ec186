// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <json.hpp>

#include "fsvg/errors.hpp"
#include "fsvg/trainer.hpp"
#include "support/temp_dir.hpp"

namespace fsvg {
namespace {

// 16 px images, 4 px patches: fast enough to run several epochs per test.
struct SmallSetup {
  TrainConfig config;
  std::vector<data::GroundingExample> train, val;

  SmallSetup() {
    data::DatasetSpec spec = data::DatasetSpec::for_geometry(16, 4);
    spec.min_shapes = spec.max_shapes = 1;
    spec.train_count = 24;
    spec.val_count = 8;
    spec.seed = 3;
    train = data::generate_dataset(spec, data::Split::kTrain);
    val = data::generate_dataset(spec, data::Split::kVal);
    config.model.image_size = 16;
    config.model.patch_size = 4;
    config.model.embed_dim = 16;
    config.model.depth = 3;
    config.model.heads = 2;
    config.model.ffn_mult = 2;
    config.model.fs_layers = {1, 2};
    config.model.rho = 0.7;
    config.model.max_text_len = 4;
    config.model.head_hidden = 16;
    config.epochs = 3;
    config.batch_size = 8;
    config.lr = 1e-3;
    config.lr_decay_epoch = 3;
  }
};

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig c;
  EXPECT_EQ(c.lr_at(1), 3e-4);
  EXPECT_EQ(c.lr_at(19), 3e-4);
  EXPECT_DOUBLE_EQ(c.lr_at(20), 3e-5);
  EXPECT_DOUBLE_EQ(c.lr_at(30), 3e-5);
}

TEST(TrainConfig, ToyDefaults) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 30u);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.model.loss.l1, 5.0);
  EXPECT_EQ(c.model.loss.giou, 2.0);
  const TrainConfig ref = TrainConfig::reference();
  EXPECT_EQ(ref.batch_size, 128u);
  EXPECT_EQ(ref.lr, 1e-5);
}

TEST(TrainConfig, ValidationRejectsBadValues) {
  auto bad = [](auto mutate) {
    TrainConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.epochs = 0; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.lr = 0.0; });
  bad([](TrainConfig& c) { c.lr = -1.0; });
  bad([](TrainConfig& c) { c.lr_decay_epoch = 0; });
  bad([](TrainConfig& c) { c.beta1 = 1.0; });
  bad([](TrainConfig& c) { c.weight_decay = -0.1; });
  bad([](TrainConfig& c) { c.grad_clip = -1.0; });
  bad([](TrainConfig& c) { c.model.rho = 0.0; });
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Train, StepLossesAreDeterministic) {
  SmallSetup s;
  auto record = [&] {
    std::vector<double> losses;
    TrainCallbacks cb;
    cb.on_step = [&](std::uint64_t, double l) { losses.push_back(l); };
    cb.keep_going = [](std::uint64_t step) { return step < 10; };
    s.config.epochs = 5;
    train(s.config, s.train, nullptr, cb);
    return losses;
  };
  const auto a = record();
  const auto b = record();
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
}

TEST(Train, SeedChangesTheRun) {
  SmallSetup s;
  auto first_loss = [&](std::uint64_t seed) {
    s.config.seed = seed;
    double out = 0;
    TrainCallbacks cb;
    cb.on_step = [&](std::uint64_t, double l) { out = l; };
    cb.keep_going = [](std::uint64_t) { return false; };
    train(s.config, s.train, nullptr, cb);
    return out;
  };
  EXPECT_NE(first_loss(1), first_loss(2));
}

TEST(Train, HistoryAndLearningRates) {
  SmallSetup s;
  const TrainResult r = train(s.config, s.train, &s.val);
  ASSERT_EQ(r.history.size(), 3u);
  EXPECT_EQ(r.epochs_done, 3u);
  EXPECT_EQ(r.optimizer.step, 9u);  // 3 batches of 8 per epoch
  EXPECT_EQ(r.history[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.history[2].lr, 1e-4);
  for (const auto& h : r.history) {
    ASSERT_TRUE(h.val_acc.has_value());
    EXPECT_GE(*h.val_acc, 0.0);
    EXPECT_LE(*h.val_acc, 1.0);
    EXPECT_TRUE(std::isfinite(h.mean_loss));
  }
  for (const auto* t : const_cast<ModelParams<float>&>(r.params).tensors()) EXPECT_FALSE(t->has_grad());
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  SmallSetup s;
  const TrainResult full = train(s.config, s.train);

  TrainConfig first = s.config;
  first.epochs = 1;
  const TrainResult part = train(first, s.train);
  test::TempDir dir;
  save_checkpoint(dir.path() / "e1.ckpt", first.model, part.params, &part.optimizer, part.epochs_done);
  const auto ck = load_checkpoint<float>(dir.path() / "e1.ckpt");
  const TrainResult resumed = train(s.config, s.train, nullptr, {}, &ck);

  EXPECT_EQ(resumed.optimizer.step, full.optimizer.step);
  auto a = const_cast<ModelParams<float>&>(full.params).tensors();
  auto b = const_cast<ModelParams<float>&>(resumed.params).tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(*a[i], *b[i])) << i;
}

TEST(Train, LossDecreasesOnATinyOverfitSet) {
  SmallSetup s;
  s.train.resize(4);
  s.config.batch_size = 4;
  s.config.epochs = 200;
  s.config.lr_decay_epoch = 1000;
  const TrainResult r = train(s.config, s.train);
  EXPECT_LT(r.history.back().mean_loss, 0.5 * r.history.front().mean_loss);
}

TEST(Train, RejectsMismatchedExamples) {
  SmallSetup s;
  TrainConfig c = s.config;
  c.model.image_size = 32;
  EXPECT_THROW(train(c, s.train), ConfigError);
  EXPECT_THROW(train(s.config, {}), ContractError);
  auto bad = s.train;
  bad[0].text_ids = {99};
  EXPECT_THROW(train(s.config, bad), ConfigError);
}

TEST(Train, BatchGradientIsMeanOfExampleGradients) {
  SmallSetup s;
  auto p = init_params<float>(s.config.model, 4);
  const data::GroundingExample* both[] = {&s.train[0], &s.train[1]};
  const double l2 = batch_loss_and_grad(p, s.config.model, both);
  const std::vector<float> g2(p.head.back().bias.grad().begin(), p.head.back().bias.grad().end());

  const data::GroundingExample* a[] = {&s.train[0]};
  const data::GroundingExample* b[] = {&s.train[1]};
  const double la = batch_loss_and_grad(p, s.config.model, a);
  const std::vector<float> ga(p.head.back().bias.grad().begin(), p.head.back().bias.grad().end());
  const double lb = batch_loss_and_grad(p, s.config.model, b);
  const std::vector<float> gb(p.head.back().bias.grad().begin(), p.head.back().bias.grad().end());

  EXPECT_NEAR(l2, 0.5 * (la + lb), 1e-5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g2[i], 0.5f * (ga[i] + gb[i]), 1e-5f);
}

TEST(Evaluate, CountsAndRange) {
  SmallSetup s;
  const auto p = init_params<float>(s.config.model, 0);
  const EvalResult r = evaluate(p, s.config.model, s.val);
  EXPECT_EQ(r.count, s.val.size());
  EXPECT_GE(r.acc, 0.0);
  EXPECT_LE(r.acc, 1.0);
  EXPECT_GE(r.mean_iou, 0.0);
  EXPECT_THROW(evaluate(p, s.config.model, {}), ContractError);
}

TEST(EpochLog, IsOneJsonObjectWithTheRunConfig) {
  TrainConfig c;
  EpochStats s;
  s.epoch = 4;
  s.lr = 3e-4;
  s.mean_loss = 1.25;
  s.val_acc = 0.5;
  s.seconds = 2.0;
  const std::string line = epoch_log_line(c, s);
  EXPECT_EQ(line.find('\n'), std::string::npos);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["event"], "epoch");
  EXPECT_EQ(j["epoch"], 4);
  EXPECT_EQ(j["loss"], 1.25);
  EXPECT_EQ(j["val_acc"], 0.5);
  EXPECT_EQ(j["config"]["model"]["rho"], 0.7);
  EXPECT_EQ(j["config"]["batch_size"], 32);

  s.val_acc.reset();
  EXPECT_TRUE(nlohmann::json::parse(epoch_log_line(c, s))["val_acc"].is_null());
}

}  // namespace
}  // namespace fsvg
