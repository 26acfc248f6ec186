// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsvg/autodiff.hpp"
#include "fsvg/rng.hpp"
#include "fsvg/tensor.hpp"

namespace fsvg::nn {

using ad::Var;

/// y = x W + b with W stored [in x out].
template <typename T>
struct LinearParams {
  Tensor<T> weight;
  Tensor<T> bias;

  static LinearParams zeros(std::size_t in, std::size_t out) {
    return {Tensor<T>({in, out}), Tensor<T>({out})};
  }
  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }
};

/// One pre-norm encoder block. q/k/v/out are head-fused D -> D projections.
template <typename T>
struct BlockParams {
  std::size_t heads = 1;
  LinearParams<T> q, k, v, out;
  LinearParams<T> fc1, fc2;
  Tensor<T> norm1_gamma, norm1_beta;
  Tensor<T> norm2_gamma, norm2_beta;

  // Zero projections, unit gammas.
  static BlockParams make(std::size_t dim, std::size_t heads, std::size_t ffn_mult);
  std::size_t dim() const { return q.in_dim(); }
};

// Calls f(name, tensor) for every tensor in a fixed order.
template <typename P, typename F>
void visit_linear(const std::string& prefix, P& p, F&& f) {
  f(prefix + ".weight", p.weight);
  f(prefix + ".bias", p.bias);
}

template <typename P, typename F>
void visit_block(const std::string& prefix, P& b, F&& f) {
  visit_linear(prefix + ".attn.q", b.q, f);
  visit_linear(prefix + ".attn.k", b.k, f);
  visit_linear(prefix + ".attn.v", b.v, f);
  visit_linear(prefix + ".attn.out", b.out, f);
  visit_linear(prefix + ".ffn.fc1", b.fc1, f);
  visit_linear(prefix + ".ffn.fc2", b.fc2, f);
  f(prefix + ".norm1.gamma", b.norm1_gamma);
  f(prefix + ".norm1.beta", b.norm1_beta);
  f(prefix + ".norm2.gamma", b.norm2_gamma);
  f(prefix + ".norm2.beta", b.norm2_beta);
}

template <typename T>
Var<T> linear(Var<T> x, const LinearParams<T>& p);

template <typename T>
struct AttentionOutput {
  Var<T> y;
  // Scaled pre-softmax logits, [heads x N x N], per head Q_h K_h^T / sqrt(D / heads).
  Tensor<T> logits;
};

/// Multi-head self-attention over the rows of `x`. Key columns with
/// key_mask[j] == false get zero attention weight. An empty mask attends to
/// every key.
template <typename T>
AttentionOutput<T> mhsa_forward(Var<T> x, const BlockParams<T>& p, std::span<const std::uint8_t> key_mask);

// fc2(gelu(fc1(x)))
template <typename T>
Var<T> ffn_forward(Var<T> x, const BlockParams<T>& p);

// x + MHSA(norm1(x)). First half of every block; the selection step sits
// between this and ffn_residual().
template <typename T>
AttentionOutput<T> attention_residual(Var<T> x, const BlockParams<T>& p,
                                      std::span<const std::uint8_t> key_mask);

// x + FFN(norm2(x))
template <typename T>
Var<T> ffn_residual(Var<T> x, const BlockParams<T>& p);

template <typename T>
Var<T> block_forward_dense(Var<T> x, const BlockParams<T>& p, std::span<const std::uint8_t> key_mask);

void init_normal(Tensor<float>& t, Rng& rng, double stddev);
void init_normal(Tensor<double>& t, Rng& rng, double stddev);

// --- AdamW ---------------------------------------------------------------------

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <typename T>
struct OptimizerState {
  AdamWOptions options;
  std::uint64_t step = 0;
  // One entry per parameter, in the order the params span is passed.
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

/// Decoupled weight decay Adam with bias correction, using state.options.lr.
/// Moments are allocated on the first call. Every parameter must carry a grad.
template <typename T>
void adamw_step(std::span<Tensor<T>* const> params, OptimizerState<T>& state);

}  // namespace fsvg::nn
