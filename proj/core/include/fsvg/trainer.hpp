// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsvg/checkpoint.hpp"
#include "fsvg/model.hpp"
#include "fsvg/nn.hpp"
#include "fsvg/synth_data.hpp"

namespace fsvg {

/// Model config plus optimization hyperparameters. Defaults are the toy
/// from-scratch schedule; the full-scale reference setting (batch 128,
/// lr 1e-5 on pretrained weights, decay at epoch 60) is `reference()`.
struct TrainConfig {
  ModelConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 3e-4;
  std::size_t lr_decay_epoch = 20;  // 1-based epoch from which the decayed lr applies
  double lr_decay_factor = 0.1;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;

  static TrainConfig reference();

  void validate() const;
  // Learning rate used during 1-based epoch `epoch`.
  double lr_at(std::size_t epoch) const;
  std::string to_json() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double mean_loss = 0.0;
  std::optional<double> val_acc;
  double seconds = 0.0;
};

struct TrainCallbacks {
  std::function<void(std::uint64_t step, double loss)> on_step;
  std::function<void(const EpochStats&)> on_epoch;
  // Return false to stop after the current step.
  std::function<bool(std::uint64_t step)> keep_going;
};

struct TrainResult {
  ModelParams<float> params;
  nn::OptimizerState<float> optimizer;
  std::uint64_t epochs_done = 0;
  std::vector<EpochStats> history;
};

/// Mini-batch AdamW on the weighted L1 + GIoU loss, single-threaded and
/// deterministic in config.seed. The model config's seed is ignored; params
/// are initialized from `config.seed`. With `resume`, training continues from
/// its params, optimizer state and epoch count.
TrainResult train(const TrainConfig& config, const std::vector<data::GroundingExample>& train_set,
                  const std::vector<data::GroundingExample>* val_set = nullptr,
                  const TrainCallbacks& callbacks = {}, const Checkpoint<float>* resume = nullptr);

// Mean loss of one batch and the parameter gradients it leaves behind.
double batch_loss_and_grad(ModelParams<float>& params, const ModelConfig& config,
                           std::span<const data::GroundingExample* const> batch);

struct EvalResult {
  double acc = 0.0;  // Acc@0.5
  double mean_iou = 0.0;
  std::size_t count = 0;
};

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelConfig& config,
                    const std::vector<data::GroundingExample>& examples);

std::string epoch_log_line(const TrainConfig& config, const EpochStats& stats);

}  // namespace fsvg
