// SPDX-License-Identifier: Apache-2.0
#pragma once

// Rollout storage, generalized advantage estimation and the clipped PPO update.

#include <cstdint>
#include <random>
#include <vector>

#include "stg/numerics/optimizer.hpp"
#include "stg/rl/policy.hpp"

namespace stg::rl {

struct PpoConfig {
    double gamma = 0.99;
    double lambda = 0.95;
    double clip_ratio = 0.1;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    double learning_rate = 2.5e-4;
    double max_grad_norm = 0.5;
    std::size_t horizon = 512;  // environment steps per rollout
    std::size_t epochs = 4;     // passes over each rollout
    std::size_t minibatch = 128;

    void validate() const;
};

// One rollout of transitions. There is deliberately no field for environment
// rewards: the learner only ever sees intrinsic rewards.
struct RolloutBuffer {
    std::vector<env::ObservationState> states;
    std::vector<std::size_t> actions;
    std::vector<double> log_probs;
    std::vector<double> values;
    std::vector<double> rewards;  // intrinsic
    std::vector<bool> terminals;     // the episode ended in an absorbing state
    std::vector<bool> episode_ends;  // terminal or truncated at the horizon
    // V(s_{t+1}) used when the episode was truncated at t or t is the last step.
    std::vector<double> bootstrap_values;
    std::vector<double> advantages;
    std::vector<double> returns;

    std::size_t size() const { return states.size(); }
    void clear();
    void push(env::ObservationState state, std::size_t action, double log_prob, double value, double reward,
              bool terminal, bool episode_end, double bootstrap_value = 0.0);
    // Throws std::invalid_argument if the per-step vectors disagree in length.
    void check_aligned() const;
};

// Fills advantages and returns (returns = advantages + values). Advantages
// are left unnormalized.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

// Standardizes to mean 0 and standard deviation 1 (unchanged if constant).
std::vector<double> normalize_advantages(const std::vector<double>& advantages);

template <typename T>
struct PpoMinibatch {
    Tensor<T> states;  // (N, k, H, W)
    std::vector<std::size_t> actions;
    Tensor<T> old_log_probs;  // (N)
    Tensor<T> advantages;     // (N), already normalized
    Tensor<T> returns;        // (N, 1)
};

template <typename T>
struct PpoLoss {
    Var<T> total;    // policy + value_coef * value - entropy_coef * entropy
    Var<T> policy;   // -mean min(r A, clip(r) A)
    Var<T> value;    // mean (V - R)^2
    Var<T> entropy;  // mean policy entropy
    double clip_fraction = 0;
    double approx_kl = 0;
};

template <typename T>
PpoLoss<T> ppo_loss(Tape<T>& tape, const PolicyNet<T>& net, const PpoMinibatch<T>& batch, const PpoConfig& config);

struct PpoStats {
    double policy_loss = 0;
    double value_loss = 0;
    double entropy = 0;
    double clip_fraction = 0;
    double approx_kl = 0;
    std::size_t minibatches = 0;
};

// config.epochs shuffled passes of minibatch updates (Adam, global grad-norm
// clipping). Non-finite losses throw num::NumericalError before any update
// from that minibatch is applied.
PpoStats ppo_update(const RolloutBuffer& buffer, PolicyNet<float>& net, num::Optimizer<float>& optimizer,
                    const PpoConfig& config, std::mt19937_64& rng);

}  // namespace stg::rl
