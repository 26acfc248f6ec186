// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>

namespace fsvg {

std::uint64_t splitmix64(std::uint64_t& state);

/// xoshiro256** seeded through splitmix64. All derived draws (uniform,
/// integer range, normal) are defined here so that byte-identical streams can
/// be reproduced from the algorithm alone.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [lo, hi] (inclusive), rejection-sampled without bias.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Box-Muller; consumes two uniforms per call, no cached spare.
  double normal(double mean = 0.0, double stddev = 1.0);

  // Advances the state by 2^128 draws.
  void jump();

  const std::array<std::uint64_t, 4>& state() const noexcept { return s_; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace fsvg
