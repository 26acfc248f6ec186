// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsvg/image.hpp"
#include "fsvg/objectives.hpp"
#include "fsvg/selection.hpp"

namespace fsvg::viz {

inline constexpr std::array<float, 3> kPredColor = {0.0f, 1.0f, 0.0f};
inline constexpr std::array<float, 3> kTruthColor = {1.0f, 0.0f, 0.0f};

// discarded[i] == 1 when original patch i is no longer in the sequence after `stage`.
std::vector<std::uint8_t> discarded_after(const SelectionTrace& trace, std::size_t stage,
                                          std::size_t num_patches);

// Copy of `image` with every discarded patch set to zero.
Image blacken_patches(const Image& image, std::span<const std::uint8_t> discarded,
                      std::size_t patch_size);

// Patches whose pixels are all exactly zero.
std::size_t count_black_patches(const Image& image, std::size_t patch_size);

// 1-pixel outline of `box` (normalized cx, cy, w, h), clipped to the image.
void draw_box(Image& image, const BBox& box, const std::array<float, 3>& rgb);

struct Rendering {
  std::vector<std::size_t> layers;  // FS layer of each stage image
  std::vector<Image> stages;
  Image overlay;
};

Rendering render(const Image& image, const SelectionTrace& trace, std::size_t patch_size,
                 const BBox& predicted, const BBox& truth);

// Writes <prefix>_stage<j>_layer<L>.ppm per stage and <prefix>_overlay.ppm.
std::vector<std::filesystem::path> write_rendering(const Rendering& r, const std::string& prefix);

}  // namespace fsvg::viz
