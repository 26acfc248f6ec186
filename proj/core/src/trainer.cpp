// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "config_json.hpp"
#include "fsvg/errors.hpp"
#include "fsvg/rng.hpp"

namespace fsvg {

TrainConfig TrainConfig::reference() {
  TrainConfig c;
  c.model = ModelConfig::vitb();
  c.epochs = 90;
  c.batch_size = 128;
  c.lr = 1e-5;
  c.lr_decay_epoch = 61;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (epochs == 0) fail("epochs must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be positive");
  if (lr_decay_epoch == 0) fail("lr_decay_epoch is 1-based");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr;
}

namespace {

nlohmann::ordered_json train_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = config_to_json(c.model);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_decay_epoch"] = c.lr_decay_epoch;
  j["lr_decay_factor"] = c.lr_decay_factor;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  return j;
}

void check_examples(const std::vector<data::GroundingExample>& set, const ModelConfig& m,
                    const char* what) {
  if (set.empty()) throw ContractError(std::string(what) + " set is empty");
  for (const auto& ex : set) {
    if (ex.image.height != m.image_size || ex.image.width != m.image_size) {
      throw ConfigError(std::string(what) + " example " + ex.id + " is " + std::to_string(ex.image.height) +
                        "x" + std::to_string(ex.image.width) + ", model expects " +
                        std::to_string(m.image_size));
    }
    if (ex.text_ids.empty()) throw ContractError(std::string(what) + " example " + ex.id + " has no text");
    for (TokenId t : ex.text_ids) {
      if (t < 0 || static_cast<std::size_t>(t) >= m.vocab_size) {
        throw ConfigError(std::string(what) + " example " + ex.id + " has token " + std::to_string(t) +
                          " outside the model vocabulary");
      }
    }
  }
}

void clip_gradients(std::span<Tensor<float>* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (float g : p->grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const auto s = static_cast<float>(max_norm / norm);
  for (auto* p : params) {
    for (float& g : p->grad()) g *= s;
  }
}

}  // namespace

std::string TrainConfig::to_json() const { return train_json(*this).dump(); }

std::string epoch_log_line(const TrainConfig& config, const EpochStats& s) {
  nlohmann::ordered_json j;
  j["event"] = "epoch";
  j["epoch"] = s.epoch;
  j["lr"] = s.lr;
  j["loss"] = s.mean_loss;
  if (s.val_acc) {
    j["val_acc"] = *s.val_acc;
  } else {
    j["val_acc"] = nullptr;
  }
  j["seconds"] = s.seconds;
  j["config"] = train_json(config);
  return j.dump();
}

double batch_loss_and_grad(ModelParams<float>& params, const ModelConfig& config,
                           std::span<const data::GroundingExample* const> batch) {
  if (batch.empty()) throw ContractError("batch_loss_and_grad: empty batch");
  params.zero_grad();
  auto tensors = params.tensors();
  const float inv = 1.0f / static_cast<float>(batch.size());
  double total = 0.0;
  for (const auto* ex : batch) {
    ad::Tape<float> tape;
    auto out = model_forward(tape, ex->image, ex->text_ids, params, config);
    auto loss = box_loss(out.box, ex->bbox, config.loss);
    total += loss.value()[0];
    tape.backward(loss, std::span<Tensor<float>* const>(tensors), inv);
  }
  return total / static_cast<double>(batch.size());
}

TrainResult train(const TrainConfig& config, const std::vector<data::GroundingExample>& train_set,
                  const std::vector<data::GroundingExample>* val_set, const TrainCallbacks& cb,
                  const Checkpoint<float>* resume) {
  config.validate();
  check_examples(train_set, config.model, "training");
  if (val_set) check_examples(*val_set, config.model, "validation");

  TrainResult r;
  r.optimizer.options = {config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay};
  if (resume) {
    check_compatible(resume->config, config.model);
    if (!resume->optimizer) throw ContractError("resume checkpoint carries no optimizer state");
    r.params = resume->params;
    r.optimizer.step = resume->optimizer->step;
    r.optimizer.first_moment = resume->optimizer->first_moment;
    r.optimizer.second_moment = resume->optimizer->second_moment;
    r.epochs_done = resume->epoch;
  } else {
    r.params = init_params<float>(config.model, config.seed);
  }
  auto tensors = r.params.tensors();
  const std::span<Tensor<float>* const> tspan(tensors);

  std::vector<std::size_t> order(train_set.size());
  std::vector<const data::GroundingExample*> batch;
  for (std::size_t epoch = r.epochs_done + 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    r.optimizer.options.lr = config.lr_at(epoch);

    // Per-epoch stream so a resumed run shuffles exactly like an uninterrupted one.
    Rng rng(config.seed ^ (0x9E3779B97F4A7C15ULL * epoch));
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(&train_set[order[i]]);
      }
      const double loss = batch_loss_and_grad(r.params, config.model, batch);
      if (config.grad_clip > 0.0) clip_gradients(tspan, config.grad_clip);
      nn::adamw_step(tspan, r.optimizer);
      loss_sum += loss;
      ++batches;
      if (cb.on_step) cb.on_step(r.optimizer.step, loss);
      if (cb.keep_going && !cb.keep_going(r.optimizer.step)) {
        r.params.zero_grad();
        return r;
      }
    }

    EpochStats s;
    s.epoch = epoch;
    s.lr = r.optimizer.options.lr;
    s.mean_loss = loss_sum / static_cast<double>(batches);
    if (val_set) s.val_acc = evaluate(r.params, config.model, *val_set).acc;
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.epochs_done = epoch;
    r.history.push_back(s);
    if (cb.on_epoch) cb.on_epoch(s);
  }
  for (auto* t : tensors) t->clear_grad();
  return r;
}

template <typename T>
EvalResult evaluate(const ModelParams<T>& params, const ModelConfig& config,
                    const std::vector<data::GroundingExample>& examples) {
  if (examples.empty()) throw ContractError("evaluate: empty dataset");
  check_examples(examples, config, "evaluation");
  std::vector<BBox> preds, gts;
  preds.reserve(examples.size());
  gts.reserve(examples.size());
  double iou_sum = 0.0;
  for (const auto& ex : examples) {
    preds.push_back(predict(ex.image, ex.text_ids, params, config).first);
    gts.push_back(ex.bbox);
    iou_sum += iou(preds.back(), gts.back());
  }
  EvalResult r;
  r.acc = acc_at_05(preds, gts);
  r.mean_iou = iou_sum / static_cast<double>(examples.size());
  r.count = examples.size();
  return r;
}

template EvalResult evaluate(const ModelParams<float>&, const ModelConfig&,
                             const std::vector<data::GroundingExample>&);
template EvalResult evaluate(const ModelParams<double>&, const ModelConfig&,
                             const std::vector<data::GroundingExample>&);

}  // namespace fsvg
