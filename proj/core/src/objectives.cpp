// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "fsvg/errors.hpp"

namespace fsvg {

namespace {

// Forward-mode number carrying d/d(pred cx, cy, w, h).
template <typename R>
struct Dual {
  R v = 0;
  std::array<R, 4> d{};

  Dual() = default;
  Dual(R value) : v(value) {}  // NOLINT: constants promote implicitly
  static Dual seed(R value, int i) {
    Dual x(value);
    x.d[static_cast<std::size_t>(i)] = 1;
    return x;
  }

  friend Dual operator+(Dual a, const Dual& b) {
    a.v += b.v;
    for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
    return a;
  }
  friend Dual operator-(Dual a, const Dual& b) {
    a.v -= b.v;
    for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
    return a;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
    return r;
  }
};

double value_of(double x) { return x; }
long double value_of(long double x) { return x; }
template <typename R>
R value_of(const Dual<R>& x) { return x.v; }

template <typename S>
S min_of(const S& a, const S& b) { return value_of(b) < value_of(a) ? b : a; }
template <typename S>
S max_of(const S& a, const S& b) { return value_of(b) > value_of(a) ? b : a; }
template <typename S>
S abs_of(const S& a) { return value_of(a) < 0.0 ? S(0.0) - a : a; }
template <typename S>
S clamp01(const S& a) { return min_of(max_of(a, S(0.0)), S(1.0)); }

template <typename S>
struct Box {
  S cx, cy, w, h;
};

template <typename S>
struct CornerBox {
  S x0, y0, x1, y1;
};

template <typename S>
CornerBox<S> corners(const Box<S>& b) {
  const S half_w = b.w * S(0.5);
  const S half_h = b.h * S(0.5);
  return {clamp01(b.cx - half_w), clamp01(b.cy - half_h), clamp01(b.cx + half_w),
          clamp01(b.cy + half_h)};
}

template <typename S>
struct Overlap {
  S iou;
  S giou;
};

template <typename S>
Overlap<S> overlap(const Box<S>& a, const Box<S>& b) {
  const auto ca = corners(a);
  const auto cb = corners(b);
  const S area_a = (ca.x1 - ca.x0) * (ca.y1 - ca.y0);
  const S area_b = (cb.x1 - cb.x0) * (cb.y1 - cb.y0);
  const S iw = max_of(min_of(ca.x1, cb.x1) - max_of(ca.x0, cb.x0), S(0.0));
  const S ih = max_of(min_of(ca.y1, cb.y1) - max_of(ca.y0, cb.y0), S(0.0));
  const S inter = iw * ih;
  const S uni = area_a + area_b - inter;
  const S iou_v = value_of(uni) > 0.0 ? inter / uni : S(0.0);
  const S cw = max_of(ca.x1, cb.x1) - min_of(ca.x0, cb.x0);
  const S ch = max_of(ca.y1, cb.y1) - min_of(ca.y0, cb.y0);
  const S area_c = cw * ch;
  const S giou_v = value_of(area_c) > 0.0 ? iou_v - (area_c - uni) / area_c : iou_v;
  return {iou_v, giou_v};
}

template <typename S, typename G>
S l1_of(const Box<S>& p, const Box<G>& g) {
  return (abs_of(p.cx - S(g.cx)) + abs_of(p.cy - S(g.cy)) + abs_of(p.w - S(g.w)) +
          abs_of(p.h - S(g.h))) *
         S(0.25);
}

Box<double> plain(const BBox& b) { return {b.cx, b.cy, b.w, b.h}; }
template <typename R>
Box<Dual<R>> seeded(const std::array<R, 4>& b) {
  using D = Dual<R>;
  return {D::seed(b[0], 0), D::seed(b[1], 1), D::seed(b[2], 2), D::seed(b[3], 3)};
}
template <typename R>
Box<Dual<R>> lift(const BBox& b) {
  using D = Dual<R>;
  return {D(static_cast<R>(b.cx)), D(static_cast<R>(b.cy)), D(static_cast<R>(b.w)), D(static_cast<R>(b.h))};
}

ValueAndGrad unpack(const Dual<double>& x) { return {x.v, x.d}; }

}  // namespace

bool BBox::in_unit_range() const {
  auto ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  return ok(cx) && ok(cy) && ok(w) && ok(h);
}

Corners to_corners(const BBox& b) {
  const auto c = corners(plain(b));
  return {c.x0, c.y0, c.x1, c.y1};
}

void LossWeights::validate() const {
  if (!(l1 >= 0.0) || !(giou >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

double l1_box_loss(const BBox& pred, const BBox& gt) { return l1_of(plain(pred), plain(gt)); }

double iou(const BBox& a, const BBox& b) { return overlap(plain(a), plain(b)).iou; }

double giou(const BBox& a, const BBox& b) { return overlap(plain(a), plain(b)).giou; }

double total_loss(const BBox& pred, const BBox& gt, const LossWeights& weights) {
  return weights.l1 * l1_box_loss(pred, gt) + weights.giou * (1.0 - giou(pred, gt));
}

ValueAndGrad giou_with_grad(const BBox& pred, const BBox& gt) {
  return unpack(overlap(seeded(pred.as_array()), lift<double>(gt)).giou);
}

template <typename R>
R total_loss_with_grad(const std::array<R, 4>& pred, const BBox& gt, const LossWeights& weights,
                       std::array<R, 4>& grad) {
  using D = Dual<R>;
  const Box<D> p = seeded(pred);
  const D l1 = l1_of(p, lift<R>(gt));
  const D g = overlap(p, lift<R>(gt)).giou;
  const D total = D(static_cast<R>(weights.l1)) * l1 + D(static_cast<R>(weights.giou)) * (D(1) - g);
  grad = total.d;
  return total.v;
}

template double total_loss_with_grad(const std::array<double, 4>&, const BBox&, const LossWeights&,
                                     std::array<double, 4>&);
template long double total_loss_with_grad(const std::array<long double, 4>&, const BBox&,
                                          const LossWeights&, std::array<long double, 4>&);

ValueAndGrad total_loss_with_grad(const BBox& pred, const BBox& gt, const LossWeights& weights) {
  ValueAndGrad r;
  r.value = total_loss_with_grad(pred.as_array(), gt, weights, r.grad);
  return r;
}

double acc_at_05(std::span<const BBox> preds, std::span<const BBox> gts) {
  if (preds.empty()) throw ContractError("acc_at_05: no predictions");
  if (preds.size() != gts.size()) throw ContractError("acc_at_05: prediction/ground-truth count mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (iou(preds[i], gts[i]) > 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

}  // namespace fsvg
