// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "fsvg/autodiff.hpp"
#include "fsvg/rng.hpp"
#include "fsvg/selection.hpp"

namespace {

using fsvg::Tensor;

Tensor<float> random_tensor(std::size_t r, std::size_t c, std::uint64_t seed) {
  fsvg::Rng rng(seed);
  Tensor<float> t({r, c});
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) {
    fsvg::ad::Tape<float> tape(false);
    auto y = fsvg::ad::matmul(tape.constant(a), tape.constant(b));
    benchmark::DoNotOptimize(y.value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulForwardBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
  for (auto _ : state) {
    fsvg::ad::Tape<float> tape;
    auto y = fsvg::ad::sum(fsvg::ad::matmul(tape.param(a), tape.param(b)));
    tape.backward(y);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(64)->Arg(128);

void BM_SoftmaxRows(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor(n, n, 3);
  for (auto _ : state) {
    fsvg::ad::Tape<float> tape(false);
    auto y = fsvg::ad::softmax_rows(tape.constant(x));
    benchmark::DoNotOptimize(y.value().data().data());
  }
}
BENCHMARK(BM_SoftmaxRows)->Arg(73)->Arg(654);

void BM_TopRho(benchmark::State& state) {
  fsvg::Rng rng(4);
  std::vector<double> s(static_cast<std::size_t>(state.range(0)));
  for (auto& v : s) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(fsvg::top_rho_indices(s, 0.7));
}
BENCHMARK(BM_TopRho)->Arg(64)->Arg(576);

}  // namespace
