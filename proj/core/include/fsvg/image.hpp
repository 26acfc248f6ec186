// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <vector>

namespace fsvg {

/// RGB image, rows top to bottom, interleaved channels, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  void set_rgb(std::size_t y, std::size_t x, const std::array<float, 3>& rgb) {
    for (std::size_t c = 0; c < 3; ++c) at(y, x, c) = rgb[c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Rounds every value to the nearest multiple of 1/255 after clamping to [0, 1].
void quantize_8bit(Image& img);

// Binary PPM (P6, maxval 255). Throws IoError / FormatError naming the file.
void write_ppm(const Image& img, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

}  // namespace fsvg
