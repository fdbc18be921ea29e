// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stg/numerics/parameters.hpp"

namespace stg::num {

enum class OptimizerKind { AdamW, RMSprop };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double alpha = 0.99;  // RMSprop smoothing
    double eps = 1e-8;
    double weight_decay = 0.01;  // AdamW only

    static OptimizerConfig adamw(double lr, double weight_decay = 0.01) {
        OptimizerConfig c;
        c.kind = OptimizerKind::AdamW;
        c.lr = lr;
        c.weight_decay = weight_decay;
        return c;
    }
    static OptimizerConfig rmsprop(double lr) {
        OptimizerConfig c;
        c.kind = OptimizerKind::RMSprop;
        c.lr = lr;
        c.weight_decay = 0.0;
        return c;
    }
};

// Holds per-parameter moment accumulators. Updates every parameter of the
// given sets, then zeroes their gradients.
template <typename T>
class Optimizer {
   public:
    explicit Optimizer(OptimizerConfig config) : config_(config) {}

    void step(std::span<ParameterSet<T>* const> sets);
    void step(ParameterSet<T>& set) {
        ParameterSet<T>* sets[] = {&set};
        step(sets);
    }

    const OptimizerConfig& config() const { return config_; }
    std::uint64_t steps() const { return step_; }

   private:
    struct Moments {
        std::vector<T> first;
        std::vector<T> second;
    };

    OptimizerConfig config_;
    std::uint64_t step_ = 0;
    std::unordered_map<const Parameter<T>*, Moments> moments_;
};

// Rescales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<ParameterSet<T>* const> sets, double max_norm);

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace stg::num
