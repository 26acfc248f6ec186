// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "fsvg/model.hpp"
#include "fsvg/synth_data.hpp"
#include "fsvg/trainer.hpp"

namespace {

// Toy model forward; range(0) is rho in percent.
void BM_ToyForward(benchmark::State& state) {
  fsvg::ModelConfig c = fsvg::ModelConfig::toy();
  c.rho = static_cast<double>(state.range(0)) / 100.0;
  fsvg::data::DatasetSpec spec;
  spec.train_count = 1;
  const auto ex = fsvg::data::generate_dataset(spec, fsvg::data::Split::kTrain).front();
  const auto params = fsvg::init_params<float>(c, 0);
  for (auto _ : state) benchmark::DoNotOptimize(fsvg::predict(ex.image, ex.text_ids, params, c));
}
BENCHMARK(BM_ToyForward)->Arg(100)->Arg(70)->Arg(50)->Unit(benchmark::kMicrosecond);

// One optimizer-free training batch of 32 (forward + backward).
void BM_ToyBatchGradient(benchmark::State& state) {
  fsvg::ModelConfig c = fsvg::ModelConfig::toy();
  c.rho = static_cast<double>(state.range(0)) / 100.0;
  fsvg::data::DatasetSpec spec;
  spec.train_count = 32;
  const auto examples = fsvg::data::generate_dataset(spec, fsvg::data::Split::kTrain);
  std::vector<const fsvg::data::GroundingExample*> batch;
  for (const auto& e : examples) batch.push_back(&e);
  auto params = fsvg::init_params<float>(c, 0);
  for (auto _ : state) benchmark::DoNotOptimize(fsvg::batch_loss_and_grad(params, c, batch));
}
BENCHMARK(BM_ToyBatchGradient)->Arg(100)->Arg(70)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
