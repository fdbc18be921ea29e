// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>

#include "stg/numerics/autograd.hpp"

namespace stg::num {

struct GradCheckOptions {
    // Entries checked per parameter; 0 checks every entry.
    std::size_t max_entries_per_param = 0;
    // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
    double abs_floor = 1e-6;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t entries_checked = 0;
};

template <typename T>
using LossFn = std::function<Var<T>(Tape<T>&)>;

// Compares reverse-mode gradients with central finite differences.
// Throws std::runtime_error if two identical evaluations of loss_fn differ.
template <typename T>
GradCheckReport gradient_check(const LossFn<T>& loss_fn, std::span<ParameterSet<T>* const> params,
                               double perturbation, const GradCheckOptions& options = {});

}  // namespace stg::num
