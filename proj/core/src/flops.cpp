// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#include "fsvg/flops.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "fsvg/errors.hpp"
#include "fsvg/selection.hpp"

namespace fsvg::flops {

std::vector<BlockLengths> sequence_schedule(const ModelConfig& config, double rho) {
  config.validate();
  validate_rho(rho);
  const std::size_t fixed = 1 + config.max_text_len;
  std::size_t visual = config.num_patches();
  std::vector<BlockLengths> out;
  out.reserve(config.depth);
  for (std::size_t i = 1; i <= config.depth; ++i) {
    BlockLengths l;
    l.mhsa_len = fixed + visual;
    if (config.is_fs_layer(i)) visual = kept_count(visual, rho);
    l.ffn_len = fixed + visual;
    out.push_back(l);
  }
  return out;
}

LayerCost layer_flops(std::uint64_t mhsa_len, std::uint64_t ffn_len, std::uint64_t dim,
                      std::uint64_t heads, std::uint64_t ffn_mult) {
  if (mhsa_len == 0 || ffn_len == 0 || dim == 0 || heads == 0 || ffn_mult == 0) {
    throw ConfigError("layer_flops: dimensions must be positive");
  }
  LayerCost c;
  c.mhsa = 4 * mhsa_len * dim * dim + 2 * mhsa_len * mhsa_len * dim;
  c.ffn = 2 * ffn_mult * ffn_len * dim * dim;
  return c;
}

CostBreakdown cost_breakdown(const ModelConfig& config, double rho, const CostOptions& options) {
  const std::uint64_t scale = options.count_flops ? 2 : 1;
  CostBreakdown out;
  const auto schedule = sequence_schedule(config, rho);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    BlockCost b;
    b.block = i + 1;
    b.lengths = schedule[i];
    b.cost = layer_flops(schedule[i].mhsa_len, schedule[i].ffn_len, config.embed_dim, config.heads,
                         config.ffn_mult);
    b.cost.mhsa *= scale;
    b.cost.ffn *= scale;
    out.total += b.cost.total();
    out.blocks.push_back(b);
  }
  if (options.include_embedding) {
    out.embedding = scale * config.num_patches() * config.patch_dim() * config.embed_dim;
    out.total += out.embedding;
  }
  return out;
}

std::vector<FlopsRow> flops_table(const ModelConfig& config, std::span<const double> rhos,
                                  const CostOptions& options) {
  const double dense = static_cast<double>(cost_breakdown(config, 1.0, options).total);
  std::vector<FlopsRow> rows;
  rows.reserve(rhos.size());
  for (double rho : rhos) {
    FlopsRow r;
    r.rho = rho;
    r.total = cost_breakdown(config, rho, options).total;
    r.ratio = static_cast<double>(r.total) / dense;
    rows.push_back(r);
  }
  return rows;
}

std::vector<double> parse_rho_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("bad rho list entry '" + item + "'");
    }
    if (used != item.size()) throw ConfigError("bad rho list entry '" + item + "'");
    validate_rho(v);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty rho list");
  return out;
}

std::string format_table(std::span<const FlopsRow> rows, const CostOptions& options) {
  const char* unit = options.count_flops ? "GFLOPs" : "GMACs";
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%-6s %12s %8s\n", "rho", unit, "ratio");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-6.2f %12.3f %8.4f\n", r.rho, static_cast<double>(r.total) / 1e9,
                  r.ratio);
    out += line;
  }
  return out;
}

std::string format_json_lines(std::span<const FlopsRow> rows, const CostOptions& options) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["rho"] = r.rho;
    j[options.count_flops ? "flops" : "macs"] = r.total;
    j["giga"] = static_cast<double>(r.total) / 1e9;
    j["ratio"] = r.ratio;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace fsvg::flops
