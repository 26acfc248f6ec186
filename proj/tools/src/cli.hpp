// Copyright 2026 The FSVG Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "fsvg/autodiff.hpp"

namespace fsvg::cli {

// Runs one subcommand; args exclude the program name. Returns the exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct GradCheckResult {
  ad::GradCheckReport report;
  std::string worst_name;  // parameter holding the worst entry
  std::size_t parameter_count = 0;
};

// Tiny preset in double precision, one generated single-shape example,
// central differences over every parameter entry. Weights are drawn with
// `init_std`; at the training init of 0.02 some ReLU pre-activations in the
// head sit within h of zero and the difference quotient straddles the kink.
GradCheckResult tiny_grad_check(std::uint64_t seed, double h, double init_std = 0.1);

}  // namespace fsvg::cli
