// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "fsvg/model.hpp"
#include "fsvg/nn.hpp"

namespace fsvg {

// File layout (all integers little-endian):
//   "FSVG" | u32 version | u64 n + n bytes header JSON | u64 tensor count |
//   per tensor: u64 n + n bytes name | u8 dtype (0 f32, 1 f64) | u32 rank |
//               rank x u64 dims | raw element data
// Optimizer moments are stored as "adam.m/<param>" and "adam.v/<param>".
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  ModelConfig config;
  ModelParams<T> params;
  std::optional<nn::OptimizerState<T>> optimizer;
  std::uint64_t epoch = 0;  // completed training epochs
};

struct LoadOptions {
  // When set, every field that determines parameter shapes must match.
  const ModelConfig* expected = nullptr;
  // Fail unless the file carries optimizer state.
  bool require_optimizer = false;
};

/// Writes to "<path>.tmp" and renames over `path`, so a failed save never
/// leaves a partial checkpoint behind.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config,
                     const ModelParams<T>& params, const nn::OptimizerState<T>* optimizer = nullptr,
                     std::uint64_t epoch = 0);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

// Throws ConfigError naming the first shape-determining field that differs.
void check_compatible(const ModelConfig& stored, const ModelConfig& expected);

}  // namespace fsvg
