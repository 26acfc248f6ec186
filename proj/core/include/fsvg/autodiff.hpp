// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsvg/tensor.hpp"

namespace fsvg::ad {

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;

  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Computation record: an append-only list of primitive applications in
/// execution order. Each entry's inputs precede it, so reverse iteration is a
/// valid adjoint schedule.
///
/// Parameters enter as leaves bound to caller-owned tensors. backward() fills
/// per-node adjoints; export_grad() moves a parameter's adjoint into its
/// Tensor::grad buffer.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With record_gradients == false, leaves never require gradients and no
  // adjoint closures are kept (inference mode).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that never receives an adjoint.
  Var<T> constant(Tensor<T> value);
  // Leaf owning its value that does receive an adjoint.
  Var<T> variable(Tensor<T> value);
  // Leaf referencing `p`. The tensor must outlive the tape and stay unmodified.
  Var<T> param(const Tensor<T>& p);

  // Appends a primitive application. Throws NumericError if `value` holds NaN/Inf.
  Var<T> record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn backward);
  Var<T> record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const;
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Mutable adjoint of node `id`, allocated as zeros on first access.
  std::span<T> adjoint(std::size_t id);
  // Empty when the node received no adjoint.
  std::span<const T> adjoint_view(std::size_t id) const { return nodes_.at(id).adjoint; }

  /// Reverse accumulation from a scalar. Adjoints from a previous call are
  /// discarded first, so calling twice gives identical results.
  void backward(Var<T> loss, T seed = T{1});
  /// backward() followed by export_grad() for every tensor in `params`.
  void backward(Var<T> loss, std::span<Tensor<T>* const> params, T seed = T{1});

  // Adds the summed adjoint of every leaf bound to `p` into p's grad buffer.
  // Allocates a zero grad when `p` was never reached.
  void export_grad(Tensor<T>& p) const;

 private:
  struct Node {
    std::string_view op;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<T> adjoint;
    bool requires_grad = false;
  };

  Var<T> push(Node node);

  bool record_gradients_ = true;
  std::deque<Node> nodes_;
  std::unordered_multimap<const Tensor<T>*, std::size_t> param_leaves_;
};

// --- primitives -------------------------------------------------------------
// All shapes are explicit. "Row vector" arguments have cols() equal to the
// matrix's cols() and a single row; they are applied to every row.

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T factor);
template <typename T> Var<T> shift(Var<T> x, T offset);
template <typename T> Var<T> add_row(Var<T> x, Var<T> row);
template <typename T> Var<T> mul_row(Var<T> x, Var<T> row);

template <typename T> Var<T> relu(Var<T> x);
// tanh approximation.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);

// Scalar (rank-0) reductions over every element.
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// Per-row reductions: m x n -> m x 1.
template <typename T> Var<T> sum_rows(Var<T> x);
template <typename T> Var<T> mean_rows(Var<T> x);

template <typename T> Var<T> transpose(Var<T> x);
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);

template <typename T> Var<T> concat_rows(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);
template <typename T> Var<T> concat_cols(std::span<const Var<T>> parts);
template <typename T> Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
// Output row j is x row idx[j]. Duplicate indices accumulate in the adjoint.
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const std::size_t> idx);

// Row-wise softmax with max subtraction. When `column_mask` is non-empty,
// columns marked false get exactly zero weight.
template <typename T> Var<T> softmax_rows(Var<T> x, std::span<const std::uint8_t> column_mask = {});
// Population-variance layer norm per row.
template <typename T>
Var<T> layernorm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

/// Scalar function of all elements of `x` with a caller-supplied gradient.
/// `fn` returns f(x) and writes df/dx into its second argument.
template <typename T>
using ScalarFn = std::function<T(std::span<const T> x, std::span<T> grad)>;
template <typename T> Var<T> apply_scalar_fn(std::string_view op, Var<T> x, ScalarFn<T> fn);

// --- gradient checking -------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;    // index into the params span
  std::size_t worst_element = 0;  // flat element index within that tensor
  std::size_t checked = 0;        // number of scalar entries compared
};

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, over every element of every tensor in `params`. The relative
/// error of one entry is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
///
/// `f` must build the loss from scratch on the supplied tape, binding each
/// parameter through Tape::param, and be deterministic. Parameter grads are
/// overwritten.
template <typename T>
GradCheckReport finite_diff_check(const std::function<Var<T>(Tape<T>&)>& f,
                                  std::span<Tensor<T>* const> params, T h);

/// As above, but the central differences come from `reference`, the same
/// computation in a wider type R over `reference_params` (element-wise equal
/// to `params`). Differences in T are limited by rounding in the loss to about
/// ulp(loss) / 2h, which swamps entries whose true gradient is near zero.
template <typename T, typename R>
GradCheckReport finite_diff_check(const std::function<Var<T>(Tape<T>&)>& f,
                                  std::span<Tensor<T>* const> params,
                                  const std::function<Var<R>(Tape<R>&)>& reference,
                                  std::span<Tensor<R>* const> reference_params, R h);

}  // namespace fsvg::ad
