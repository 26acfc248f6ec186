// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <span>

namespace fsvg {

/// Center-format box normalized to the image: (cx, cy, w, h) in [0, 1].
struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  static BBox from_corners(double x0, double y0, double x1, double y1) {
    return {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  }
  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
  bool in_unit_range() const;

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Corner form clipped to the unit square.
struct Corners {
  double x0, y0, x1, y1;
};
Corners to_corners(const BBox& b);

struct LossWeights {
  double l1 = 5.0;
  double giou = 2.0;
  void validate() const;
};

// Mean absolute difference over the four center-format coordinates.
double l1_box_loss(const BBox& pred, const BBox& gt);
// Zero when the union is empty.
double iou(const BBox& a, const BBox& b);
// IoU - |C \ (A u B)| / |C| with C the smallest enclosing box.
double giou(const BBox& a, const BBox& b);
// l1 * L1 + giou * (1 - GIoU)
double total_loss(const BBox& pred, const BBox& gt, const LossWeights& weights);

struct ValueAndGrad {
  double value = 0.0;
  std::array<double, 4> grad{};  // d/d(cx, cy, w, h) of the prediction
};
ValueAndGrad giou_with_grad(const BBox& pred, const BBox& gt);
ValueAndGrad total_loss_with_grad(const BBox& pred, const BBox& gt, const LossWeights& weights);

// Same loss evaluated entirely in R (double or long double). Writes the
// gradient wrt the prediction into `grad`.
template <typename R>
R total_loss_with_grad(const std::array<R, 4>& pred, const BBox& gt, const LossWeights& weights,
                       std::array<R, 4>& grad);

// Fraction of pairs with IoU strictly above 0.5.
double acc_at_05(std::span<const BBox> preds, std::span<const BBox> gts);

}  // namespace fsvg
