// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fsvg/errors.hpp"

namespace fsvg {

void Segments::validate() const {
  if (reg_count != 1) throw ContractError("segments: expected exactly one REG token");
  if (visual_count < 1) throw ContractError("segments: no visual tokens");
}

void validate_rho(double rho) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw ConfigError("keep ratio rho must lie in (0, 1], got " + std::to_string(rho));
  }
}

std::size_t kept_count(std::size_t visual_count, double rho) {
  validate_rho(rho);
  // The slack keeps exact decimal halves (0.7 * 45 = 31.4999...) rounding up.
  const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(visual_count) + 0.5 + 1e-9));
  return std::max<std::size_t>(1, k);
}

template <typename T>
std::vector<double> visual_language_scores(const Tensor<T>& logits, const Segments& seg,
                                           std::span<const std::uint8_t> language_valid) {
  seg.validate();
  const std::size_t n = seg.total();
  if (logits.rank() != 3 || logits.shape()[1] != n || logits.shape()[2] != n) {
    throw ShapeError("visual_language_scores: logits " + shape_to_string(logits.shape()) +
                     " do not match sequence length " + std::to_string(n));
  }
  if (!language_valid.empty() && language_valid.size() != seg.language_count) {
    throw ShapeError("visual_language_scores: language mask length mismatch");
  }
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < seg.language_count; ++j) {
    if (language_valid.empty() || language_valid[j]) cols.push_back(seg.language_begin() + j);
  }
  if (cols.empty()) throw ContractError("visual_language_scores: no valid language tokens");

  const std::size_t heads = logits.shape()[0];
  const double denom = static_cast<double>(heads * cols.size());
  std::vector<double> scores(seg.visual_count);
  for (std::size_t r = 0; r < seg.visual_count; ++r) {
    const std::size_t row = seg.visual_begin() + r;
    double acc = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      const T* base = logits.data().data() + (h * n + row) * n;
      for (std::size_t c : cols) acc += static_cast<double>(base[c]);
    }
    scores[r] = acc / denom;
  }
  return scores;
}

std::vector<std::size_t> top_rho_indices(std::span<const double> scores, double rho) {
  validate_rho(rho);
  if (scores.empty()) throw ContractError("top_rho_indices: no visual tokens");
  const std::size_t k = kept_count(scores.size(), rho);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

template <typename T>
TokenSequence<T> apply_selection(const TokenSequence<T>& seq, std::span<const std::size_t> kept,
                                 std::size_t layer, std::vector<double> scores,
                                 SelectionTrace& trace) {
  const Segments& seg = seq.segments;
  seg.validate();
  if (kept.empty()) throw ContractError("apply_selection: nothing kept");
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] >= seg.visual_count) {
      throw IndexError("apply_selection: visual position " + std::to_string(kept[i]) +
                       " out of range for " + std::to_string(seg.visual_count) + " tokens");
    }
    if (i > 0 && kept[i] <= kept[i - 1]) {
      throw ContractError("apply_selection: kept positions must be strictly increasing");
    }
  }

  std::vector<std::size_t> rows;
  rows.reserve(1 + kept.size() + seg.language_count);
  rows.push_back(0);
  for (std::size_t p : kept) rows.push_back(seg.visual_begin() + p);
  for (std::size_t j = 0; j < seg.language_count; ++j) rows.push_back(seg.language_begin() + j);

  TokenSequence<T> out;
  out.data = ad::gather_rows(seq.data, std::span<const std::size_t>(rows));
  out.segments = seg;
  out.segments.visual_count = kept.size();
  out.patch_index_map.reserve(kept.size());
  for (std::size_t p : kept) out.patch_index_map.push_back(seq.patch_index_map.at(p));

  SelectionStage stage;
  stage.layer = layer;
  stage.scores = std::move(scores);
  stage.kept_local.assign(kept.begin(), kept.end());
  stage.kept_original = out.patch_index_map;
  trace.stages.push_back(std::move(stage));
  return out;
}

template std::vector<double> visual_language_scores(const Tensor<float>&, const Segments&,
                                                    std::span<const std::uint8_t>);
template std::vector<double> visual_language_scores(const Tensor<double>&, const Segments&,
                                                    std::span<const std::uint8_t>);
template TokenSequence<float> apply_selection(const TokenSequence<float>&,
                                              std::span<const std::size_t>, std::size_t,
                                              std::vector<double>, SelectionTrace&);
template std::vector<double> visual_language_scores(const Tensor<long double>&, const Segments&,
                                                    std::span<const std::uint8_t>);
template TokenSequence<long double> apply_selection(const TokenSequence<long double>&,
                                                    std::span<const std::size_t>, std::size_t,
                                                    std::vector<double>, SelectionTrace&);
template TokenSequence<double> apply_selection(const TokenSequence<double>&,
                                               std::span<const std::size_t>, std::size_t,
                                               std::vector<double>, SelectionTrace&);

}  // namespace fsvg
