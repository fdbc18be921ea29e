// SPDX-License-Identifier: Apache-2.0
#pragma once

// Finite-difference checks of every training loss on tiny 64-bit configs.

#include <cstdint>
#include <string>
#include <vector>

#include "stg/numerics/gradcheck.hpp"

namespace stg::analysis {

struct GradientCheckEntry {
    std::string loss;
    num::GradCheckReport report;
};

inline constexpr double kGradientTolerance = 1e-4;

// Critic loss, adversarial and prediction losses, temporal distance loss,
// the combined generator objective and the PPO surrogate.
std::vector<GradientCheckEntry> run_gradient_suite(std::uint64_t seed);

}  // namespace stg::analysis
