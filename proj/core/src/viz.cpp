// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/viz.hpp"

#include <algorithm>
#include <cmath>

#include "fsvg/errors.hpp"

namespace fsvg::viz {

std::vector<std::uint8_t> discarded_after(const SelectionTrace& trace, std::size_t stage,
                                          std::size_t num_patches) {
  if (stage >= trace.stages.size()) {
    throw IndexError("stage " + std::to_string(stage) + " of " + std::to_string(trace.stages.size()));
  }
  std::vector<std::uint8_t> out(num_patches, 1);
  for (std::size_t p : trace.stages[stage].kept_original) {
    if (p >= num_patches) throw IndexError("trace patch index " + std::to_string(p) + " out of range");
    out[p] = 0;
  }
  return out;
}

Image blacken_patches(const Image& image, std::span<const std::uint8_t> discarded, std::size_t patch_size) {
  if (patch_size == 0 || image.width % patch_size || image.height % patch_size) {
    throw ShapeError("blacken_patches: image is not a whole number of patches");
  }
  const std::size_t grid_w = image.width / patch_size;
  if (discarded.size() != grid_w * (image.height / patch_size)) {
    throw ShapeError("blacken_patches: mask length does not match the patch grid");
  }
  Image out = image;
  for (std::size_t i = 0; i < discarded.size(); ++i) {
    if (!discarded[i]) continue;
    const std::size_t py = (i / grid_w) * patch_size, px = (i % grid_w) * patch_size;
    for (std::size_t y = py; y < py + patch_size; ++y) {
      for (std::size_t x = px; x < px + patch_size; ++x) out.set_rgb(y, x, {0.0f, 0.0f, 0.0f});
    }
  }
  return out;
}

std::size_t count_black_patches(const Image& image, std::size_t patch_size) {
  std::size_t n = 0;
  for (std::size_t py = 0; py + patch_size <= image.height; py += patch_size) {
    for (std::size_t px = 0; px + patch_size <= image.width; px += patch_size) {
      bool black = true;
      for (std::size_t y = py; y < py + patch_size && black; ++y) {
        for (std::size_t x = px; x < px + patch_size && black; ++x) {
          for (std::size_t c = 0; c < 3; ++c) black = black && image.at(y, x, c) == 0.0f;
        }
      }
      n += black;
    }
  }
  return n;
}

void draw_box(Image& image, const BBox& box, const std::array<float, 3>& rgb) {
  if (image.width == 0 || image.height == 0) return;
  const Corners c = to_corners(box);
  auto px = [](double v, std::size_t size) {
    const auto p = static_cast<long>(std::floor(v * static_cast<double>(size)));
    return static_cast<std::size_t>(std::clamp<long>(p, 0, static_cast<long>(size) - 1));
  };
  const std::size_t x0 = px(c.x0, image.width), x1 = px(std::nextafter(c.x1, 0.0), image.width);
  const std::size_t y0 = px(c.y0, image.height), y1 = px(std::nextafter(c.y1, 0.0), image.height);
  for (std::size_t x = x0; x <= x1; ++x) {
    image.set_rgb(y0, x, rgb);
    image.set_rgb(y1, x, rgb);
  }
  for (std::size_t y = y0; y <= y1; ++y) {
    image.set_rgb(y, x0, rgb);
    image.set_rgb(y, x1, rgb);
  }
}

Rendering render(const Image& image, const SelectionTrace& trace, std::size_t patch_size,
                 const BBox& predicted, const BBox& truth) {
  if (patch_size == 0) throw ShapeError("render: patch_size must be positive");
  const std::size_t n = (image.width / patch_size) * (image.height / patch_size);
  Rendering r;
  for (std::size_t s = 0; s < trace.stages.size(); ++s) {
    r.layers.push_back(trace.stages[s].layer);
    r.stages.push_back(blacken_patches(image, discarded_after(trace, s, n), patch_size));
  }
  r.overlay = image;
  draw_box(r.overlay, truth, kTruthColor);
  draw_box(r.overlay, predicted, kPredColor);
  return r;
}

std::vector<std::filesystem::path> write_rendering(const Rendering& r, const std::string& prefix) {
  std::vector<std::filesystem::path> paths;
  for (std::size_t s = 0; s < r.stages.size(); ++s) {
    paths.emplace_back(prefix + "_stage" + std::to_string(s + 1) + "_layer" + std::to_string(r.layers[s]) +
                       ".ppm");
    write_ppm(r.stages[s], paths.back());
  }
  paths.emplace_back(prefix + "_overlay.ppm");
  write_ppm(r.overlay, paths.back());
  return paths;
}

}  // namespace fsvg::viz
