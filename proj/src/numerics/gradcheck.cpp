// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace stg::num {

namespace {

template <typename T>
double evaluate(const LossFn<T>& loss_fn) {
    Tape<T> tape(TapeMode::Inference);
    return static_cast<double>(loss_fn(tape).item());
}

}  // namespace

template <typename T>
GradCheckReport gradient_check(const LossFn<T>& loss_fn, std::span<ParameterSet<T>* const> params,
                               double perturbation, const GradCheckOptions& options) {
    if (perturbation <= 0) throw std::invalid_argument("gradient_check: perturbation must be > 0");

    const double first = evaluate(loss_fn);
    const double second = evaluate(loss_fn);
    if (first != second) {
        throw std::runtime_error("gradient_check: loss is non-deterministic (" + std::to_string(first) +
                                 " vs " + std::to_string(second) + ")");
    }

    for (auto* set : params) set->mark_grads_ready();
    {
        Tape<T> tape;
        tape.backward(loss_fn(tape));
    }

    GradCheckReport report;
    std::mt19937_64 rng(options.seed);
    for (auto* set : params) {
        for (auto& p : *set) {
            std::vector<std::size_t> idx(p->value.size());
            std::iota(idx.begin(), idx.end(), 0);
            if (options.max_entries_per_param && idx.size() > options.max_entries_per_param) {
                std::shuffle(idx.begin(), idx.end(), rng);
                idx.resize(options.max_entries_per_param);
                std::sort(idx.begin(), idx.end());
            }
            for (std::size_t i : idx) {
                const T saved = p->value[i];
                p->value[i] = static_cast<T>(saved + perturbation);
                const double up = evaluate(loss_fn);
                p->value[i] = static_cast<T>(saved - perturbation);
                const double down = evaluate(loss_fn);
                p->value[i] = saved;
                const double numeric = (up - down) / (2.0 * perturbation);
                const double analytic = static_cast<double>(p->grad[i]);
                const double denom =
                    std::max({std::abs(analytic), std::abs(numeric), options.abs_floor});
                const double rel = analytic == numeric ? 0.0 : std::abs(analytic - numeric) / denom;
                ++report.entries_checked;
                if (rel > report.max_rel_error || report.worst_param.empty()) {
                    report.max_rel_error = rel;
                    report.worst_param = p->name;
                    report.worst_index = i;
                    report.worst_analytic = analytic;
                    report.worst_numeric = numeric;
                }
            }
        }
        set->zero_grad();
    }
    return report;
}

template GradCheckReport gradient_check<float>(const LossFn<float>&, std::span<ParameterSet<float>* const>,
                                               double, const GradCheckOptions&);
template GradCheckReport gradient_check<double>(const LossFn<double>&,
                                                std::span<ParameterSet<double>* const>, double,
                                                const GradCheckOptions&);

}  // namespace stg::num
