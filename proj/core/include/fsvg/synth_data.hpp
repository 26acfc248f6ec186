// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsvg/image.hpp"
#include "fsvg/model.hpp"
#include "fsvg/objectives.hpp"

namespace fsvg::data {

enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow };
enum class ShapeKind : std::uint8_t { kCircle, kSquare, kTriangle };
enum class Split : std::uint8_t { kTrain, kVal };

inline constexpr std::array<Color, 4> kColors = {Color::kRed, Color::kGreen, Color::kBlue, Color::kYellow};
inline constexpr std::array<ShapeKind, 3> kShapes = {ShapeKind::kCircle, ShapeKind::kSquare,
                                                     ShapeKind::kTriangle};

const char* color_name(Color c);
const char* shape_name(ShapeKind s);
std::array<float, 3> color_rgb(Color c);
const char* split_name(Split s);

/// Word list; position is the token id. Id 0 is the pad token.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> words);

  // "<pad>", the four colors, then the three shapes.
  static Vocabulary shapes();

  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }
  const std::string& word(TokenId id) const;
  // Throws FormatError for unknown words.
  TokenId id(const std::string& word) const;

  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& ids) const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> words_;
};

// One rendered object; x0/y0 is the top-left of its extent x extent square.
struct PlacedShape {
  Color color;
  ShapeKind kind;
  std::size_t x0 = 0;
  std::size_t y0 = 0;
  std::size_t extent = 0;
  BBox box;  // tight box of the rasterized pixels
};

struct GroundingExample {
  std::string id;
  Image image;
  std::vector<TokenId> text_ids;
  BBox bbox;
  // Every object in the scene. Only filled by the generator, not persisted.
  std::vector<PlacedShape> scene;
  std::size_t target = 0;
};

struct DatasetSpec {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 3;
  // Side of the square each shape is drawn in; the minimum must be >= 2 * patch_size.
  std::size_t min_extent = 16;
  std::size_t max_extent = 24;
  std::size_t gap = 2;  // minimum empty pixels between shape squares
  std::size_t train_count = 2000;
  std::size_t val_count = 200;
  std::uint64_t seed = 0;
  float background = 0.1f;
  double noise_std = 0.02;
  std::size_t max_attempts = 100;  // positions tried per shape
  std::size_t max_layouts = 50;    // full layouts tried per image

  // Defaults with shape extents scaled to [2P, 3P].
  static DatasetSpec for_geometry(std::size_t image_size, std::size_t patch_size);
  void validate() const;
};

/// Deterministic in (spec.seed, split). The validation stream is the train
/// stream advanced by one xoshiro jump (2^128 draws), so splits never share
/// stream positions. Images are quantized to 8 bits on creation.
std::vector<GroundingExample> generate_dataset(const DatasetSpec& spec, Split split);

struct Dataset {
  Vocabulary vocab;
  std::vector<GroundingExample> examples;
};

/// Writes <dir>/vocab.json, <dir>/<split>.jsonl and <dir>/images/<id>.ppm.
void save_dataset(const std::filesystem::path& dir, const Vocabulary& vocab,
                  const std::vector<GroundingExample>& examples, Split split);
Dataset load_dataset(const std::filesystem::path& dir, Split split);

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary load_vocabulary(const std::filesystem::path& path);

}  // namespace fsvg::data
