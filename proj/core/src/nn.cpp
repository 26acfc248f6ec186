// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "fsvg/errors.hpp"

namespace fsvg::nn {

template <typename T>
BlockParams<T> BlockParams<T>::make(std::size_t dim, std::size_t heads, std::size_t ffn_mult) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  BlockParams b;
  b.heads = heads;
  b.q = LinearParams<T>::zeros(dim, dim);
  b.k = LinearParams<T>::zeros(dim, dim);
  b.v = LinearParams<T>::zeros(dim, dim);
  b.out = LinearParams<T>::zeros(dim, dim);
  b.fc1 = LinearParams<T>::zeros(dim, ffn_mult * dim);
  b.fc2 = LinearParams<T>::zeros(ffn_mult * dim, dim);
  b.norm1_gamma = Tensor<T>({dim}, T{1});
  b.norm1_beta = Tensor<T>({dim});
  b.norm2_gamma = Tensor<T>({dim}, T{1});
  b.norm2_beta = Tensor<T>({dim});
  return b;
}

template <typename T>
Var<T> linear(Var<T> x, const LinearParams<T>& p) {
  auto& tape = *x.tape();
  return ad::add_row(ad::matmul(x, tape.param(p.weight)), tape.param(p.bias));
}

template <typename T>
AttentionOutput<T> mhsa_forward(Var<T> x, const BlockParams<T>& p, std::span<const std::uint8_t> key_mask) {
  const std::size_t n = x.rows();
  const std::size_t dim = p.dim();
  if (n == 0) throw ContractError("mhsa_forward: empty sequence");
  if (x.cols() != dim) throw ShapeError("mhsa_forward: input width does not match block dim");
  if (!key_mask.empty()) {
    if (key_mask.size() != n) throw ShapeError("mhsa_forward: key mask length mismatch");
    if (std::none_of(key_mask.begin(), key_mask.end(), [](bool b) { return b; })) {
      throw ContractError("mhsa_forward: every key is masked");
    }
  }
  const std::size_t heads = p.heads;
  const std::size_t head_dim = dim / heads;
  const T inv_scale = T{1} / std::sqrt(static_cast<T>(head_dim));

  Var<T> q = linear(x, p.q);
  Var<T> k = linear(x, p.k);
  Var<T> v = linear(x, p.v);

  AttentionOutput<T> result;
  result.logits = Tensor<T>({heads, n, n});
  std::vector<Var<T>> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var<T> qh = ad::slice_cols(q, h * head_dim, head_dim);
    Var<T> kh = ad::slice_cols(k, h * head_dim, head_dim);
    Var<T> vh = ad::slice_cols(v, h * head_dim, head_dim);
    Var<T> scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_scale);
    const auto& sv = scores.value().data();
    std::copy(sv.begin(), sv.end(), result.logits.data().begin() + h * n * n);
    Var<T> attn = ad::softmax_rows(scores, key_mask);
    head_out.push_back(ad::matmul(attn, vh));
  }
  Var<T> merged = heads == 1 ? head_out.front() : ad::concat_cols<T>(head_out);
  result.y = linear(merged, p.out);
  return result;
}

template <typename T>
Var<T> ffn_forward(Var<T> x, const BlockParams<T>& p) {
  return linear(ad::gelu(linear(x, p.fc1)), p.fc2);
}

template <typename T>
AttentionOutput<T> attention_residual(Var<T> x, const BlockParams<T>& p,
                                      std::span<const std::uint8_t> key_mask) {
  auto& tape = *x.tape();
  Var<T> normed = ad::layernorm_rows(x, tape.param(p.norm1_gamma), tape.param(p.norm1_beta));
  AttentionOutput<T> attn = mhsa_forward(normed, p, key_mask);
  attn.y = ad::add(x, attn.y);
  return attn;
}

template <typename T>
Var<T> ffn_residual(Var<T> x, const BlockParams<T>& p) {
  auto& tape = *x.tape();
  Var<T> normed = ad::layernorm_rows(x, tape.param(p.norm2_gamma), tape.param(p.norm2_beta));
  return ad::add(x, ffn_forward(normed, p));
}

template <typename T>
Var<T> block_forward_dense(Var<T> x, const BlockParams<T>& p, std::span<const std::uint8_t> key_mask) {
  return ffn_residual(attention_residual(x, p, key_mask).y, p);
}

namespace {
template <typename T>
void init_normal_impl(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, stddev));
}
}  // namespace

void init_normal(Tensor<float>& t, Rng& rng, double stddev) { init_normal_impl(t, rng, stddev); }
void init_normal(Tensor<double>& t, Rng& rng, double stddev) { init_normal_impl(t, rng, stddev); }

template <typename T>
void adamw_step(std::span<Tensor<T>* const> params, OptimizerState<T>& state) {
  auto& m = state.first_moment;
  auto& v = state.second_moment;
  if (m.empty() && v.empty()) {
    for (const Tensor<T>* p : params) {
      m.emplace_back(p->shape());
      v.emplace_back(p->shape());
    }
  }
  if (m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state holds " + std::to_string(m.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (m[i].shape() != params[i]->shape() || v[i].shape() != params[i]->shape()) {
      throw ShapeError("adamw_step: moment shape mismatch for parameter " + std::to_string(i));
    }
    if (!params[i]->has_grad() && params[i]->numel() != 0) {
      throw ContractError("adamw_step: parameter " + std::to_string(i) + " has no gradient");
    }
  }

  const auto& o = state.options;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.lr * o.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto g = params[i]->grad();
    auto mi = m[i].data();
    auto vi = v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = o.beta1 * mi[j] + (1.0 - o.beta1) * gj;
      const double vj = o.beta2 * vi[j] + (1.0 - o.beta2) * gj * gj;
      mi[j] = static_cast<T>(mj);
      vi[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      const double updated = w[j] * decay - o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
      w[j] = static_cast<T>(updated);
    }
  }
}

#define FSVG_INSTANTIATE_NN(T)                                                              \
  template struct BlockParams<T>;                                                           \
  template Var<T> linear(Var<T>, const LinearParams<T>&);                                   \
  template AttentionOutput<T> mhsa_forward(Var<T>, const BlockParams<T>&,                   \
                                           std::span<const std::uint8_t>);                          \
  template Var<T> ffn_forward(Var<T>, const BlockParams<T>&);                               \
  template AttentionOutput<T> attention_residual(Var<T>, const BlockParams<T>&,             \
                                                 std::span<const std::uint8_t>);                    \
  template Var<T> ffn_residual(Var<T>, const BlockParams<T>&);                              \
  template Var<T> block_forward_dense(Var<T>, const BlockParams<T>&, std::span<const std::uint8_t>); \
  template void adamw_step(std::span<Tensor<T>* const>, OptimizerState<T>&);

FSVG_INSTANTIATE_NN(float)
FSVG_INSTANTIATE_NN(double)
FSVG_INSTANTIATE_NN(long double)

#undef FSVG_INSTANTIATE_NN

}  // namespace fsvg::nn
