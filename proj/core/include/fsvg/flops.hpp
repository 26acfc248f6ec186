// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsvg/model.hpp"

namespace fsvg::flops {

/// Per-block (mhsa_len, ffn_len) under the compounding keep schedule: at a
/// selection block the attention half runs on the pre-selection length and
/// the FFN half on the post-selection length.
std::vector<BlockLengths> sequence_schedule(const ModelConfig& config, double rho);

struct LayerCost {
  std::uint64_t mhsa = 0;  // 4*N1*D^2 + 2*N1^2*D
  std::uint64_t ffn = 0;   // 2*ffn_mult*N2*D^2
  std::uint64_t total() const { return mhsa + ffn; }
};

// Multiply-accumulate count of one block. `heads` does not change the count.
LayerCost layer_flops(std::uint64_t mhsa_len, std::uint64_t ffn_len, std::uint64_t dim,
                      std::uint64_t heads, std::uint64_t ffn_mult);

struct BlockCost {
  std::size_t block = 0;  // 1-based
  BlockLengths lengths;
  LayerCost cost;
};

struct CostOptions {
  bool count_flops = false;        // report 2 x MACs
  bool include_embedding = false;  // add the patch projection N_v * P^2*3 * D
};

struct CostBreakdown {
  std::vector<BlockCost> blocks;
  std::uint64_t embedding = 0;
  std::uint64_t total = 0;
};

CostBreakdown cost_breakdown(const ModelConfig& config, double rho, const CostOptions& options = {});

struct FlopsRow {
  double rho = 1.0;
  std::uint64_t total = 0;
  double ratio = 1.0;  // total / total at rho = 1
};

std::vector<FlopsRow> flops_table(const ModelConfig& config, std::span<const double> rhos,
                                  const CostOptions& options = {});

// Parses "1.0,0.9,0.8"; throws ConfigError on empty entries or values outside (0, 1].
std::vector<double> parse_rho_list(const std::string& text);

// Aligned plain-text table with a header row.
std::string format_table(std::span<const FlopsRow> rows, const CostOptions& options = {});
// One JSON object per row: {"rho":..,"macs"|"flops":..,"giga":..,"ratio":..}
std::string format_json_lines(std::span<const FlopsRow> rows, const CostOptions& options = {});

}  // namespace fsvg::flops
