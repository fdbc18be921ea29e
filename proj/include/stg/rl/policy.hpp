// SPDX-License-Identifier: Apache-2.0
#pragma once

// Actor-critic network for PPO. Its convolutional trunk is independent of the
// bundle's encoder.

#include <random>
#include <vector>

#include "stg/env/grid_env.hpp"
#include "stg/models/layers.hpp"

namespace stg::rl {

using models::Conv2d;
using models::Linear;
using num::ParameterSet;
using num::Tape;
using num::Tensor;
using num::Var;

struct PolicyConfig {
    env::FrameGeometry frame{32, 32, 4};
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::size_t conv_kernel = 3;
    std::size_t conv_stride = 2;
    std::size_t conv_padding = 1;
    std::size_t hidden = 128;
    std::size_t actions = env::kNumActions;

    void validate() const;
};

template <typename T>
struct PolicyOutput {
    Var<T> logits;  // (N, actions)
    Var<T> value;   // (N, 1)
};

template <typename T>
class PolicyNet {
   public:
    PolicyNet(const PolicyConfig& config, std::uint64_t seed);

    // pixels: (N, k, H, W) in [0, 1]
    PolicyOutput<T> forward(Tape<T>& tape, Var<T> pixels) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    const PolicyConfig& config() const { return config_; }

   private:
    PolicyConfig config_;
    ParameterSet<T> params_{"policy"};
    std::vector<Conv2d<T>> convs_;
    Linear<T> hidden_;
    Linear<T> pi_;
    Linear<T> v_;
};

// Action probabilities and state values without recording gradients.
template <typename T>
struct PolicyEval {
    std::vector<std::vector<double>> probs;  // per row, sums to 1
    std::vector<double> values;
};

template <typename T>
PolicyEval<T> evaluate_policy(const PolicyNet<T>& net, const std::vector<env::ObservationState>& states);

extern template class PolicyNet<float>;
extern template class PolicyNet<double>;

}  // namespace stg::rl
