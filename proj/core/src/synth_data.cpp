// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fsvg/errors.hpp"
#include "fsvg/rng.hpp"

namespace fsvg::data {

using json = nlohmann::ordered_json;

const char* color_name(Color c) {
  switch (c) {
    case Color::kRed: return "red";
    case Color::kGreen: return "green";
    case Color::kBlue: return "blue";
    case Color::kYellow: return "yellow";
  }
  return "?";
}

const char* shape_name(ShapeKind s) {
  switch (s) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "?";
}

std::array<float, 3> color_rgb(Color c) {
  switch (c) {
    case Color::kRed: return {0.90f, 0.15f, 0.15f};
    case Color::kGreen: return {0.15f, 0.80f, 0.20f};
    case Color::kBlue: return {0.20f, 0.30f, 0.95f};
    case Color::kYellow: return {0.90f, 0.85f, 0.15f};
  }
  return {0.0f, 0.0f, 0.0f};
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "val"; }

// --- vocabulary -------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (words_[i] == words_[j]) throw FormatError("vocabulary: duplicate word '" + words_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::shapes() {
  std::vector<std::string> w{"<pad>"};
  for (Color c : kColors) w.emplace_back(color_name(c));
  for (ShapeKind s : kShapes) w.emplace_back(shape_name(s));
  return Vocabulary(std::move(w));
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(const std::string& word) const {
  auto it = std::find(words_.begin(), words_.end(), word);
  if (it == words_.end()) throw FormatError("unknown word '" + word + "'");
  return static_cast<TokenId>(it - words_.begin());
}

std::vector<TokenId> Vocabulary::encode(const std::string& text) const {
  std::istringstream in(text);
  std::vector<TokenId> ids;
  std::string w;
  while (in >> w) ids.push_back(id(w));
  return ids;
}

std::string Vocabulary::decode(const std::vector<TokenId>& ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

// --- generation -------------------------------------------------------------

DatasetSpec DatasetSpec::for_geometry(std::size_t image_size, std::size_t patch_size) {
  DatasetSpec s;
  s.image_size = image_size;
  s.patch_size = patch_size;
  s.min_extent = 2 * patch_size;
  s.max_extent = 3 * patch_size;
  return s;
}

void DatasetSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("dataset spec: " + m); };
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not a positive multiple of patch_size " +
         std::to_string(patch_size));
  }
  if (min_extent < 2 * patch_size) fail("min_extent must be at least 2 * patch_size");
  if (max_extent < min_extent) fail("max_extent < min_extent");
  if (max_extent > image_size) fail("max_extent exceeds image_size");
  if (min_shapes < 1 || max_shapes < min_shapes) fail("bad shapes-per-image range");
  if (max_shapes > kColors.size() * kShapes.size()) fail("more shapes than distinct color/shape pairs");
  if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
  if (!(background >= 0.0f && background <= 1.0f)) fail("background must lie in [0, 1]");
  if (max_attempts == 0 || max_layouts == 0) fail("retry limits must be positive");
}

namespace {

bool inside(ShapeKind kind, std::size_t extent, std::size_t dx, std::size_t dy) {
  const double s = static_cast<double>(extent);
  const double px = static_cast<double>(dx) + 0.5;
  const double py = static_cast<double>(dy) + 0.5;
  switch (kind) {
    case ShapeKind::kSquare:
      return true;
    case ShapeKind::kCircle: {
      const double r = s / 2;
      return (px - r) * (px - r) + (py - r) * (py - r) <= r * r;
    }
    case ShapeKind::kTriangle:
      // apex at top center, base along the bottom edge
      return std::abs(px - s / 2) <= py / 2;
  }
  return false;
}

// Draws the shape and returns the tight box of the pixels it set.
BBox rasterize(Image& img, const PlacedShape& sh) {
  const auto rgb = color_rgb(sh.color);
  std::size_t xmin = img.width, ymin = img.height, xmax = 0, ymax = 0;
  for (std::size_t dy = 0; dy < sh.extent; ++dy) {
    for (std::size_t dx = 0; dx < sh.extent; ++dx) {
      if (!inside(sh.kind, sh.extent, dx, dy)) continue;
      const std::size_t x = sh.x0 + dx, y = sh.y0 + dy;
      img.set_rgb(y, x, rgb);
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  const double w = static_cast<double>(img.width), h = static_cast<double>(img.height);
  return BBox::from_corners(xmin / w, ymin / h, (xmax + 1) / w, (ymax + 1) / h);
}

bool separated(const PlacedShape& a, const PlacedShape& b, std::size_t gap) {
  return a.x0 + a.extent + gap <= b.x0 || b.x0 + b.extent + gap <= a.x0 ||
         a.y0 + a.extent + gap <= b.y0 || b.y0 + b.extent + gap <= a.y0;
}

std::string example_id(Split split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%06zu", split_name(split), i);
  return buf;
}

GroundingExample generate_one(const DatasetSpec& spec, Rng& rng, const Vocabulary& vocab,
                              std::string id) {
  const auto n = static_cast<std::size_t>(rng.uniform_int(
      static_cast<std::int64_t>(spec.min_shapes), static_cast<std::int64_t>(spec.max_shapes)));

  // Partial Fisher-Yates over the color x shape grid keeps pairs unique.
  std::vector<std::size_t> combos(kColors.size() * kShapes.size());
  for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(combos.size() - 1)));
    std::swap(combos[i], combos[j]);
  }

  GroundingExample ex;
  ex.id = std::move(id);
  // A layout that dead-ends is discarded whole; shapes keep their color/kind.
  bool placed = false;
  for (std::size_t layout = 0; layout < spec.max_layouts && !placed; ++layout) {
    ex.scene.clear();
    placed = true;
    for (std::size_t i = 0; i < n && placed; ++i) {
      PlacedShape sh{};
      sh.color = kColors[combos[i] / kShapes.size()];
      sh.kind = kShapes[combos[i] % kShapes.size()];
      sh.extent = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(spec.min_extent),
                                                           static_cast<std::int64_t>(spec.max_extent)));
      const auto span = static_cast<std::int64_t>(spec.image_size - sh.extent);
      placed = false;
      for (std::size_t attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
        sh.x0 = static_cast<std::size_t>(rng.uniform_int(0, span));
        sh.y0 = static_cast<std::size_t>(rng.uniform_int(0, span));
        placed = std::all_of(ex.scene.begin(), ex.scene.end(),
                             [&](const PlacedShape& o) { return separated(sh, o, spec.gap); });
      }
      if (placed) ex.scene.push_back(sh);
    }
  }
  if (!placed) {
    throw GenerationError(ex.id + ": could not place " + std::to_string(n) + " shapes in " +
                          std::to_string(spec.max_layouts) + " layouts of " +
                          std::to_string(spec.max_attempts) + " attempts per shape");
  }
  ex.target = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - 1)));

  ex.image = Image(spec.image_size, spec.image_size, spec.background);
  for (auto& sh : ex.scene) sh.box = rasterize(ex.image, sh);
  if (spec.noise_std > 0.0) {
    for (float& v : ex.image.pixels) {
      v = std::clamp(v + static_cast<float>(rng.normal(0.0, spec.noise_std)), 0.0f, 1.0f);
    }
  }
  quantize_8bit(ex.image);

  const PlacedShape& t = ex.scene[ex.target];
  ex.bbox = t.box;
  ex.text_ids = {vocab.id(color_name(t.color)), vocab.id(shape_name(t.kind))};
  return ex;
}

}  // namespace

std::vector<GroundingExample> generate_dataset(const DatasetSpec& spec, Split split) {
  spec.validate();
  Rng rng(spec.seed);
  if (split == Split::kVal) rng.jump();
  const std::size_t count = split == Split::kTrain ? spec.train_count : spec.val_count;
  const Vocabulary vocab = Vocabulary::shapes();
  std::vector<GroundingExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_one(spec, rng, vocab, example_id(split, i)));
  return out;
}

// --- files ------------------------------------------------------------------

void save_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << json(vocab.words()).dump() << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary " + path.string());
  try {
    const json j = json::parse(in);
    if (!j.is_array()) throw FormatError(path.string() + ": vocabulary must be a JSON array");
    std::vector<std::string> words;
    for (const auto& w : j) {
      if (!w.is_string()) throw FormatError(path.string() + ": vocabulary entries must be strings");
      words.push_back(w.get<std::string>());
    }
    return Vocabulary(std::move(words));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_dataset(const std::filesystem::path& dir, const Vocabulary& vocab,
                  const std::vector<GroundingExample>& examples, Split split) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create " + (dir / "images").string() + ": " + ec.message());
  save_vocabulary(dir / "vocab.json", vocab);

  const fs::path manifest = dir / (std::string(split_name(split)) + ".jsonl");
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot open " + manifest.string() + " for writing");
  for (const auto& ex : examples) {
    const std::string rel = "images/" + ex.id + ".ppm";
    write_ppm(ex.image, dir / rel);
    json line;
    line["id"] = ex.id;
    line["image"] = rel;
    line["text"] = vocab.decode(ex.text_ids);
    line["bbox"] = ex.bbox.as_array();
    out << line.dump() << "\n";
  }
  if (!out) throw IoError("write failed for " + manifest.string());
}

Dataset load_dataset(const std::filesystem::path& dir, Split split) {
  Dataset ds;
  ds.vocab = load_vocabulary(dir / "vocab.json");
  const auto manifest = dir / (std::string(split_name(split)) + ".jsonl");
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest " + manifest.string());

  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no) + ": ";
    try {
      const json j = json::parse(text);
      GroundingExample ex;
      ex.id = j.at("id").get<std::string>();
      const auto bbox = j.at("bbox").get<std::vector<double>>();
      if (bbox.size() != 4) throw FormatError("bbox must have 4 entries");
      ex.bbox = {bbox[0], bbox[1], bbox[2], bbox[3]};
      ex.text_ids = ds.vocab.encode(j.at("text").get<std::string>());
      if (ex.text_ids.empty()) throw FormatError("empty text");
      ex.image = read_ppm(dir / j.at("image").get<std::string>());
      ds.examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    } catch (const IoError& e) {
      throw IoError(where + e.what());
    } catch (const std::exception& e) {
      throw FormatError(where + e.what());
    }
  }
  return ds;
}

}  // namespace fsvg::data
