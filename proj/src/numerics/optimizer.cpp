// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace stg::num {

std::string to_string(OptimizerKind kind) {
    return kind == OptimizerKind::AdamW ? "adamw" : "rmsprop";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
    if (name == "adamw") return OptimizerKind::AdamW;
    if (name == "rmsprop") return OptimizerKind::RMSprop;
    throw std::invalid_argument("unknown optimizer: " + name);
}

template <typename T>
void Optimizer<T>::step(std::span<ParameterSet<T>* const> sets) {
    for (const auto* set : sets)
        for (const auto& p : *set)
            if (!p->grad_ready) throw std::logic_error("optimizer: missing gradient for " + p->name);

    ++step_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (auto* set : sets) {
        for (auto& p : *set) {
            Moments& m = moments_[p.get()];
            const std::size_t n = p->value.size();
            if (m.second.size() != n) {
                m.first.assign(n, T(0));
                m.second.assign(n, T(0));
            }
            auto& w = p->value.data;
            const auto& g = p->grad.data;
            if (config_.kind == OptimizerKind::AdamW) {
                const T decay = static_cast<T>(1.0 - config_.lr * config_.weight_decay);
                const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
                const T step_size = static_cast<T>(config_.lr / bc1);
                const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
                const T eps = static_cast<T>(config_.eps);
                for (std::size_t i = 0; i < n; ++i) {
                    w[i] *= decay;
                    m.first[i] = b1 * m.first[i] + (T(1) - b1) * g[i];
                    m.second[i] = b2 * m.second[i] + (T(1) - b2) * g[i] * g[i];
                    w[i] -= step_size * m.first[i] / (std::sqrt(m.second[i]) * inv_sqrt_bc2 + eps);
                }
            } else {
                const T a = static_cast<T>(config_.alpha);
                const T lr = static_cast<T>(config_.lr);
                const T eps = static_cast<T>(config_.eps);
                for (std::size_t i = 0; i < n; ++i) {
                    m.second[i] = a * m.second[i] + (T(1) - a) * g[i] * g[i];
                    w[i] -= lr * g[i] / (std::sqrt(m.second[i]) + eps);
                }
            }
            for (T v : w)
                if (!std::isfinite(v))
                    throw NumericalError("optimizer produced non-finite value in " + p->name);
        }
        set->zero_grad();
    }
}

template <typename T>
double clip_grad_norm(std::span<ParameterSet<T>* const> sets, double max_norm) {
    double total = 0;
    for (const auto* set : sets)
        for (const auto& p : *set)
            for (T g : p->grad.data) total += static_cast<double>(g) * g;
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto* set : sets)
            for (auto& p : *set)
                for (T& g : p->grad.data) g *= factor;
    }
    return norm;
}

template class Optimizer<float>;
template class Optimizer<double>;
template double clip_grad_norm<float>(std::span<ParameterSet<float>* const>, double);
template double clip_grad_norm<double>(std::span<ParameterSet<double>* const>, double);

}  // namespace stg::num
