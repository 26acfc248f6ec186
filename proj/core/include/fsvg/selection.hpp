// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fsvg/autodiff.hpp"
#include "fsvg/tensor.hpp"

namespace fsvg {

/// Row layout of the joint sequence: [REG | visual | language].
struct Segments {
  std::size_t reg_count = 1;
  std::size_t visual_count = 0;
  std::size_t language_count = 0;

  std::size_t total() const noexcept { return reg_count + visual_count + language_count; }
  std::size_t visual_begin() const noexcept { return reg_count; }
  std::size_t language_begin() const noexcept { return reg_count + visual_count; }
  // Throws ContractError unless reg_count == 1 and visual_count >= 1.
  void validate() const;

  friend bool operator==(const Segments&, const Segments&) = default;
};

/// Joint token sequence as recorded on a tape. patch_index_map[j] is the
/// original raster patch index of visual row j.
template <typename T>
struct TokenSequence {
  ad::Var<T> data;
  Segments segments;
  std::vector<std::size_t> patch_index_map;
};

struct SelectionStage {
  std::size_t layer = 0;                    // 1-based block index
  std::vector<double> scores;               // one per visual token before selection
  std::vector<std::size_t> kept_local;      // positions within the visual segment
  std::vector<std::size_t> kept_original;   // original patch indices
};

struct SelectionTrace {
  std::vector<SelectionStage> stages;
};

void validate_rho(double rho);

// max(1, round_half_up(rho * visual_count))
std::size_t kept_count(std::size_t visual_count, double rho);

/// Mean of the logits over heads and valid language columns, for each visual
/// row. `logits` is [heads x N x N] with N == seg.total(). An empty
/// `language_valid` marks every language token valid.
template <typename T>
std::vector<double> visual_language_scores(const Tensor<T>& logits, const Segments& seg,
                                           std::span<const std::uint8_t> language_valid);

/// Indices of the k = kept_count(n, rho) highest scores, ties going to the
/// lower index, returned in ascending order.
std::vector<std::size_t> top_rho_indices(std::span<const double> scores, double rho);

/// Keeps REG, the visual rows listed in `kept` (ascending, local positions)
/// and every language row. Appends a stage to `trace`.
template <typename T>
TokenSequence<T> apply_selection(const TokenSequence<T>& seq, std::span<const std::size_t> kept,
                                 std::size_t layer, std::vector<double> scores,
                                 SelectionTrace& trace);

}  // namespace fsvg
