// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fsvg/errors.hpp"

namespace fsvg::ad {

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMajor<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMajor<T>>;

template <typename T>
ConstMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMap<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MutMap<T> as_matrix(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MutMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
ConstMap<T> as_matrix(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

template <typename T>
Tape<T>& tape_of(Var<T> a, Var<T> b) {
  if (a.tape() != b.tape()) throw ContractError("operands recorded on different tapes");
  return tape_of(a);
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": shape " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

template <typename T>
void require_row_vector(const Tensor<T>& x, const Tensor<T>& row, const char* op) {
  if (row.rows() != 1 || row.cols() != x.cols()) {
    throw ShapeError(std::string(op) + ": row vector " + shape_to_string(row.shape()) +
                     " does not fit " + shape_to_string(x.shape()));
  }
}

// Elementwise unary op whose derivative is expressed via input and output.
template <typename T, typename Fwd, typename Deriv>
Var<T> unary(const char* name, Var<T> x, Fwd fwd, Deriv deriv) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  const std::size_t xi = x.id();
  return tape.record(name, std::move(out), {x}, [xi, deriv](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.adjoint_view(self);
    const auto& in = t.value(xi);
    const auto& y = t.value(self);
    auto gx = t.adjoint(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(in[i], y[i]);
  });
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = T(0.044715);

}  // namespace

// --- Tape --------------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node n;
  n.op = "variable";
  n.owned = std::move(value);
  n.requires_grad = record_gradients_;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::param(const Tensor<T>& p) {
  Node n;
  n.op = "param";
  n.external = &p;
  n.requires_grad = record_gradients_;
  auto v = push(std::move(n));
  param_leaves_.emplace(&p, v.id());
  return v;
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                       BackwardFn backward) {
  return record(op, std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()),
                std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(std::string_view op, Tensor<T> value, std::span<const Var<T>> inputs,
                       BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + std::string(op));
  }
  Node n;
  n.op = op;
  n.owned = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape() != this) throw ContractError(std::string(op) + ": input from another tape");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
const Tensor<T>& Tape<T>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.owned;
}

template <typename T>
std::span<T> Tape<T>::adjoint(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.adjoint.empty()) n.adjoint.assign(value(id).numel(), T{0});
  return n.adjoint;
}

template <typename T>
void Tape<T>::backward(Var<T> loss, T seed) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  for (auto& n : nodes_) n.adjoint.clear();
  adjoint(loss.id())[0] = seed;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.adjoint.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

template <typename T>
void Tape<T>::backward(Var<T> loss, std::span<Tensor<T>* const> params, T seed) {
  backward(loss, seed);
  for (Tensor<T>* p : params) export_grad(*p);
}

template <typename T>
void Tape<T>::export_grad(Tensor<T>& p) const {
  if (!p.has_grad()) p.zero_grad();
  auto range = param_leaves_.equal_range(&p);
  for (auto it = range.first; it != range.second; ++it) {
    const auto& adj = nodes_[it->second].adjoint;
    if (!adj.empty()) p.accumulate_grad(adj);
  }
}

// --- elementwise -------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record("add", std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    auto g = t.adjoint_view(self);
    for (std::size_t in : {ai, bi}) {
      if (!t.requires_grad(in)) continue;
      auto gi = t.adjoint(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "sub");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record("sub", std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    auto g = t.adjoint_view(self);
    if (t.requires_grad(ai)) {
      auto ga = t.adjoint(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(bi)) {
      auto gb = t.adjoint(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record("mul", std::move(out), {a, b}, [ai, bi](Tape<T>& t, std::size_t self) {
    auto g = t.adjoint_view(self);
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    if (t.requires_grad(ai)) {
      auto ga = t.adjoint(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(bi)) {
      auto gb = t.adjoint(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; },
                  [factor](T, T) { return factor; });
}

template <typename T>
Var<T> shift(Var<T> x, T offset) {
  return unary<T>("shift", x, [offset](T v) { return v + offset; }, [](T, T) { return T{1}; });
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> row) {
  auto& tape = tape_of(x, row);
  const auto& xv = x.value();
  const auto& rv = row.value();
  require_row_vector(xv, rv, "add_row");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] + rv[c];
  const std::size_t xi = x.id(), ri = row.id();
  return tape.record("add_row", std::move(out), {x, row},
                     [xi, ri, m, n](Tape<T>& t, std::size_t self) {
                       auto g = t.adjoint_view(self);
                       if (t.requires_grad(xi)) {
                         auto gx = t.adjoint(xi);
                         for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                       if (t.requires_grad(ri)) {
                         auto gr = t.adjoint(ri);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c];
                       }
                     });
}

template <typename T>
Var<T> mul_row(Var<T> x, Var<T> row) {
  auto& tape = tape_of(x, row);
  const auto& xv = x.value();
  const auto& rv = row.value();
  require_row_vector(xv, rv, "mul_row");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = xv[r * n + c] * rv[c];
  const std::size_t xi = x.id(), ri = row.id();
  return tape.record("mul_row", std::move(out), {x, row},
                     [xi, ri, m, n](Tape<T>& t, std::size_t self) {
                       auto g = t.adjoint_view(self);
                       const auto& xv = t.value(xi);
                       const auto& rv = t.value(ri);
                       if (t.requires_grad(xi)) {
                         auto gx = t.adjoint(xi);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] * rv[c];
                       }
                       if (t.requires_grad(ri)) {
                         auto gr = t.adjoint(ri);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < n; ++c) gr[c] += g[r * n + c] * xv[r * n + c];
                       }
                     });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary<T>("relu", x, [](T v) { return v > T{0} ? v : T{0}; },
                  [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return unary<T>(
      "gelu", x,
      [](T v) {
        const T u = kGeluC<T> * (v + kGeluA<T> * v * v * v);
        return T(0.5) * v * (T{1} + std::tanh(u));
      },
      [](T v, T) {
        const T u = kGeluC<T> * (v + kGeluA<T> * v * v * v);
        const T th = std::tanh(u);
        const T du = kGeluC<T> * (T{1} + T{3} * kGeluA<T> * v * v);
        return T(0.5) * (T{1} + th) + T(0.5) * v * (T{1} - th * th) * du;
      });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T{0}) return T{1} / (T{1} + std::exp(-v));
        const T e = std::exp(v);
        return e / (T{1} + e);
      },
      [](T, T y) { return y * (T{1} - y); });
}

// --- reductions --------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> x) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  T acc{0};
  for (T v : xv.data()) acc += v;
  const std::size_t xi = x.id();
  return tape.record("sum", Tensor<T>(Shape{}, std::vector<T>{acc}), {x},
                     [xi](Tape<T>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       const T g = t.adjoint_view(self)[0];
                       for (T& v : t.adjoint(xi)) v += g;
                     });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto n = static_cast<T>(x.value().numel());
  return scale(sum(x), T{1} / n);
}

template <typename T>
Var<T> sum_rows(Var<T> x) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out({m, 1});
  for (std::size_t r = 0; r < m; ++r) {
    T acc{0};
    for (std::size_t c = 0; c < n; ++c) acc += xv[r * n + c];
    out[r] = acc;
  }
  const std::size_t xi = x.id();
  return tape.record("sum_rows", std::move(out), {x}, [xi, m, n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.adjoint_view(self);
    auto gx = t.adjoint(xi);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r];
  });
}

template <typename T>
Var<T> mean_rows(Var<T> x) {
  return scale(sum_rows(x), T{1} / static_cast<T>(x.cols()));
}

// --- linear algebra ------------------------------------------------------------

template <typename T>
Var<T> transpose(Var<T> x) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out({n, m});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = xv[r * n + c];
  const std::size_t xi = x.id();
  return tape.record("transpose", std::move(out), {x}, [xi, m, n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.adjoint_view(self);
    auto gx = t.adjoint(xi);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c * m + r];
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& tape = tape_of(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_to_string(av.shape()) + " x " + shape_to_string(bv.shape()));
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor<T> out({m, n});
  as_matrix(out.data(), m, n).noalias() = as_matrix(av) * as_matrix(bv);
  const std::size_t ai = a.id(), bi = b.id();
  return tape.record("matmul", std::move(out), {a, b},
                     [ai, bi, m, k, n](Tape<T>& t, std::size_t self) {
                       auto g = as_matrix(t.adjoint_view(self), m, n);
                       if (t.requires_grad(ai)) {
                         as_matrix(t.adjoint(ai), m, k).noalias() +=
                             g * as_matrix(t.value(bi)).transpose();
                       }
                       if (t.requires_grad(bi)) {
                         as_matrix(t.adjoint(bi), k, n).noalias() +=
                             as_matrix(t.value(ai)).transpose() * g;
                       }
                     });
}

// --- structural ----------------------------------------------------------------

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  auto& tape = tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw ContractError("concat_rows: inputs on different tapes");
    if (p.cols() != n) throw ShapeError("concat_rows: column mismatch");
    offsets.push_back(total);
    ids.push_back(p.id());
    total += p.rows();
  }
  Tensor<T> out({total, n});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].value();
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + offsets[i] * n);
  }
  return tape.record("concat_rows", std::move(out), parts,
                     [ids, offsets, n](Tape<T>& t, std::size_t self) {
                       auto g = t.adjoint_view(self);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (!t.requires_grad(ids[i])) continue;
                         auto gi = t.adjoint(ids[i]);
                         const T* src = g.data() + offsets[i] * n;
                         for (std::size_t j = 0; j < gi.size(); ++j) gi[j] += src[j];
                       }
                     });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  if (begin + count > xv.rows()) throw IndexError("slice_rows: range past end");
  const std::size_t n = xv.cols();
  Tensor<T> out({count, n});
  std::copy_n(xv.data().begin() + begin * n, count * n, out.data().begin());
  const std::size_t xi = x.id();
  return tape.record("slice_rows", std::move(out), {x}, [xi, begin, n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.adjoint_view(self);
    auto gx = t.adjoint(xi);
    for (std::size_t j = 0; j < g.size(); ++j) gx[begin * n + j] += g[j];
  });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  auto& tape = tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets, widths, ids;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw ContractError("concat_cols: inputs on different tapes");
    if (p.rows() != m) throw ShapeError("concat_cols: row mismatch");
    offsets.push_back(total);
    widths.push_back(p.cols());
    ids.push_back(p.id());
    total += p.cols();
  }
  Tensor<T> out({m, total});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& v = parts[i].value();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(v.data().begin() + r * widths[i], widths[i],
                  out.data().begin() + r * total + offsets[i]);
  }
  return tape.record("concat_cols", std::move(out), parts,
                     [ids, offsets, widths, m, total](Tape<T>& t, std::size_t self) {
                       auto g = t.adjoint_view(self);
                       for (std::size_t i = 0; i < ids.size(); ++i) {
                         if (!t.requires_grad(ids[i])) continue;
                         auto gi = t.adjoint(ids[i]);
                         for (std::size_t r = 0; r < m; ++r)
                           for (std::size_t c = 0; c < widths[i]; ++c)
                             gi[r * widths[i] + c] += g[r * total + offsets[i] + c];
                       }
                     });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  if (begin + count > xv.cols()) throw IndexError("slice_cols: range past end");
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor<T> out({m, count});
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(xv.data().begin() + r * n + begin, count, out.data().begin() + r * count);
  const std::size_t xi = x.id();
  return tape.record("slice_cols", std::move(out), {x},
                     [xi, begin, count, m, n](Tape<T>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       auto g = t.adjoint_view(self);
                       auto gx = t.adjoint(xi);
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t c = 0; c < count; ++c) gx[r * n + begin + c] += g[r * count + c];
                     });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> idx) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  for (std::size_t i : idx) {
    if (i >= m) {
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " +
                       std::to_string(m) + " rows");
    }
  }
  Tensor<T> out({idx.size(), n});
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy_n(xv.data().begin() + idx[j] * n, n, out.data().begin() + j * n);
  const std::size_t xi = x.id();
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return tape.record("gather_rows", std::move(out), {x},
                     [xi, rows = std::move(rows), n](Tape<T>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       auto g = t.adjoint_view(self);
                       auto gx = t.adjoint(xi);
                       for (std::size_t j = 0; j < rows.size(); ++j)
                         for (std::size_t c = 0; c < n; ++c) gx[rows[j] * n + c] += g[j * n + c];
                     });
}

// --- normalization -------------------------------------------------------------

template <typename T>
Var<T> softmax_rows(Var<T> x, std::span<const std::uint8_t> column_mask) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (!column_mask.empty() && column_mask.size() != n) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(column_mask.size()) +
                     " vs " + std::to_string(n) + " columns");
  }
  auto kept = [&](std::size_t c) { return column_mask.empty() || column_mask[c]; };
  if (!column_mask.empty() && std::none_of(column_mask.begin(), column_mask.end(), [](bool b) { return b; })) {
    throw ContractError("softmax_rows: every column is masked");
  }
  Tensor<T> out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data().data() + r * n;
    T* dst = out.data().data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (kept(c)) mx = std::max(mx, row[c]);
    T total{0};
    for (std::size_t c = 0; c < n; ++c) {
      dst[c] = kept(c) ? std::exp(row[c] - mx) : T{0};
      total += dst[c];
    }
    for (std::size_t c = 0; c < n; ++c) dst[c] /= total;
  }
  const std::size_t xi = x.id();
  return tape.record("softmax_rows", std::move(out), {x}, [xi, m, n](Tape<T>& t, std::size_t self) {
    if (!t.requires_grad(xi)) return;
    auto g = t.adjoint_view(self);
    const auto& y = t.value(self);
    auto gx = t.adjoint(xi);
    for (std::size_t r = 0; r < m; ++r) {
      T dot{0};
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

template <typename T>
Var<T> layernorm_rows(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  auto& tape = tape_of(x, gamma);
  if (beta.tape() != &tape) throw ContractError("layernorm_rows: inputs on different tapes");
  if (!(eps > T{0})) throw ContractError("layernorm_rows: eps must be positive");
  const auto& xv = x.value();
  require_row_vector(xv, gamma.value(), "layernorm_rows");
  require_row_vector(xv, beta.value(), "layernorm_rows");
  const std::size_t m = xv.rows(), n = xv.cols();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<T> xhat(m * n), inv_std(m);
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data().data() + r * n;
    T mu{0};
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
    }
  }
  const std::size_t xi = x.id(), gi = gamma.id(), bi = beta.id();
  return tape.record(
      "layernorm_rows", std::move(out), {x, gamma, beta},
      [xi, gi, bi, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                              std::size_t self) {
        auto g = t.adjoint_view(self);
        if (t.requires_grad(gi)) {
          auto gg = t.adjoint(gi);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
        }
        if (t.requires_grad(bi)) {
          auto gb = t.adjoint(bi);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
        if (t.requires_grad(xi)) {
          const auto& gv = t.value(gi);
          auto gx = t.adjoint(xi);
          std::vector<T> dxhat(n);
          for (std::size_t r = 0; r < m; ++r) {
            T mean_d{0}, mean_dx{0};
            for (std::size_t c = 0; c < n; ++c) {
              dxhat[c] = g[r * n + c] * gv[c];
              mean_d += dxhat[c];
              mean_dx += dxhat[c] * xhat[r * n + c];
            }
            mean_d /= static_cast<T>(n);
            mean_dx /= static_cast<T>(n);
            for (std::size_t c = 0; c < n; ++c)
              gx[r * n + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[r * n + c] * mean_dx);
          }
        }
      });
}

template <typename T>
Var<T> apply_scalar_fn(std::string_view op, Var<T> x, ScalarFn<T> fn) {
  auto& tape = tape_of(x);
  const auto& xv = x.value();
  std::vector<T> grad(xv.numel());
  const T value = fn(xv.data(), grad);
  const std::size_t xi = x.id();
  return tape.record(op, Tensor<T>(Shape{}, std::vector<T>{value}), {x},
                     [xi, grad = std::move(grad)](Tape<T>& t, std::size_t self) {
                       if (!t.requires_grad(xi)) return;
                       const T g = t.adjoint_view(self)[0];
                       auto gx = t.adjoint(xi);
                       for (std::size_t i = 0; i < grad.size(); ++i) gx[i] += g * grad[i];
                     });
}

// --- gradient check ------------------------------------------------------------

template <typename T>
GradCheckReport finite_diff_check(const std::function<Var<T>(Tape<T>&)>& f,
                                  std::span<Tensor<T>* const> params, T h) {
  if (!(h > T{0})) throw ContractError("finite_diff_check: step must be positive");
  for (Tensor<T>* p : params) p->clear_grad();
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    tape.backward(loss, params);
  }
  auto eval = [&f]() {
    Tape<T> tape;
    return f(tape).value()[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = *params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const T saved = p[i];
      p[i] = saved + h;
      const T up = eval();
      p[i] = saved - h;
      const T down = eval();
      p[i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * h);
      const double analytic = p.grad()[i];
      const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      const double err = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_element = i;
      }
    }
  }
  return report;
}

template <typename T, typename R>
GradCheckReport finite_diff_check(const std::function<Var<T>(Tape<T>&)>& f,
                                  std::span<Tensor<T>* const> params,
                                  const std::function<Var<R>(Tape<R>&)>& reference,
                                  std::span<Tensor<R>* const> reference_params, R h) {
  if (!(h > R{0})) throw ContractError("finite_diff_check: step must be positive");
  if (params.size() != reference_params.size()) {
    throw ContractError("finite_diff_check: reference parameter list differs in length");
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& a = *params[pi];
    const auto& b = *reference_params[pi];
    if (a.shape() != b.shape()) throw ShapeError("finite_diff_check: reference parameter shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) {
      if (static_cast<R>(a[i]) != b[i]) {
        throw ContractError("finite_diff_check: reference parameters do not mirror the checked ones");
      }
    }
  }
  for (Tensor<T>* p : params) p->clear_grad();
  {
    Tape<T> tape;
    Var<T> loss = f(tape);
    tape.backward(loss, params);
  }
  auto eval = [&reference]() {
    Tape<R> tape(false);
    return reference(tape).value()[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<R>& p = *reference_params[pi];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const R saved = p[i];
      p[i] = saved + h;
      const R up = eval();
      p[i] = saved - h;
      const R down = eval();
      p[i] = saved;
      const R numeric = (up - down) / (2 * h);
      const R analytic = static_cast<R>(params[pi]->grad()[i]);
      const R denom = std::max(R(1e-8), std::abs(analytic) + std::abs(numeric));
      const double err = static_cast<double>(std::abs(analytic - numeric) / denom);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = pi;
        report.worst_element = i;
      }
    }
  }
  return report;
}

template GradCheckReport finite_diff_check(const std::function<Var<double>(Tape<double>&)>&,
                                           std::span<Tensor<double>* const>,
                                           const std::function<Var<long double>(Tape<long double>&)>&,
                                           std::span<Tensor<long double>* const>, long double);

// --- instantiations ------------------------------------------------------------

#define FSVG_INSTANTIATE_AD(T)                                                              \
  template class Tape<T>;                                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                      \
  template Var<T> sub(Var<T>, Var<T>);                                                      \
  template Var<T> mul(Var<T>, Var<T>);                                                      \
  template Var<T> scale(Var<T>, T);                                                         \
  template Var<T> shift(Var<T>, T);                                                         \
  template Var<T> add_row(Var<T>, Var<T>);                                                  \
  template Var<T> mul_row(Var<T>, Var<T>);                                                  \
  template Var<T> relu(Var<T>);                                                             \
  template Var<T> gelu(Var<T>);                                                             \
  template Var<T> sigmoid(Var<T>);                                                          \
  template Var<T> sum(Var<T>);                                                              \
  template Var<T> mean(Var<T>);                                                             \
  template Var<T> sum_rows(Var<T>);                                                         \
  template Var<T> mean_rows(Var<T>);                                                        \
  template Var<T> transpose(Var<T>);                                                        \
  template Var<T> matmul(Var<T>, Var<T>);                                                   \
  template Var<T> concat_rows(std::span<const Var<T>>);                                     \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> concat_cols(std::span<const Var<T>>);                                     \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                             \
  template Var<T> gather_rows(Var<T>, std::span<const std::size_t>);                        \
  template Var<T> softmax_rows(Var<T>, std::span<const std::uint8_t>);                              \
  template Var<T> layernorm_rows(Var<T>, Var<T>, Var<T>, T);                                \
  template Var<T> apply_scalar_fn(std::string_view, Var<T>, ScalarFn<T>);                   \
  template GradCheckReport finite_diff_check(const std::function<Var<T>(Tape<T>&)>&,        \
                                             std::span<Tensor<T>* const>, T);

FSVG_INSTANTIATE_AD(float)
FSVG_INSTANTIATE_AD(double)
FSVG_INSTANTIATE_AD(long double)

#undef FSVG_INSTANTIATE_AD

}  // namespace fsvg::ad
