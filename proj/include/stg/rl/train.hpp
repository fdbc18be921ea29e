// SPDX-License-Identifier: Apache-2.0
#pragma once

// Online PPO driven only by intrinsic rewards from a frozen bundle, and
// greedy evaluation against the environment's success signal.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stg/models/bundle.hpp"
#include "stg/rl/ppo.hpp"
#include "stg/rl/reward.hpp"

namespace stg::rl {

struct RlConfig {
    env::EnvConfig env;
    RewardMode reward;
    PpoConfig ppo;
    PolicyConfig policy;  // frame geometry is taken from the environment
    std::size_t total_steps = 200000;
    std::size_t reward_context = 1;  // embeddings the transformer sees per prediction
    std::size_t eval_every = 10;     // updates between evaluations
    std::size_t eval_episodes = 50;
    std::size_t checkpoint_every = 50;  // updates; 0 disables
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t updates() const { return std::max<std::size_t>(1, total_steps / ppo.horizon); }
};

struct EvalReport {
    std::size_t episodes = 0;
    double success_rate = 0;
    double success_std = 0;
    double mean_return = 0;
    double return_std = 0;
    double mean_length = 0;
    std::vector<double> returns;  // one per episode
};

using Controller = std::function<env::Action(const env::GridEnv&, const env::ObservationState&)>;

// Runs `episodes` episodes with reset seeds drawn from a stream derived from
// `seed` that training never uses. The return of an episode is 1 on success.
EvalReport evaluate_controller(const Controller& controller, const env::EnvConfig& env_config, std::size_t episodes,
                               std::uint64_t seed);
// Greedy (arg-max) actions.
EvalReport evaluate(const PolicyNet<float>& policy, const env::EnvConfig& env_config, std::size_t episodes,
                    std::uint64_t seed);

struct UpdateReport {
    std::size_t update = 0;  // 1-based
    std::size_t env_steps = 0;
    double mean_intrinsic_reward = 0;
    PpoStats ppo;
};

struct CurvePoint {
    std::size_t update = 0;
    std::size_t env_steps = 0;
    double mean_intrinsic_reward = 0;  // over the rollouts since the previous point
    double eval_success = 0;
    double eval_return = 0;
    double entropy = 0;
};

std::string curve_csv_header();
std::string curve_csv_row(const CurvePoint& point);

struct RlHooks {
    std::function<void(const UpdateReport&)> after_update;
    std::function<void(const CurvePoint&)> after_eval;
};

struct RlResult {
    PolicyNet<float> policy;
    std::vector<CurvePoint> curve;
    std::string bundle_hash;  // identical before and after training
};

class RlAborted : public std::runtime_error {
   public:
    RlAborted(const std::string& what, std::size_t update, std::optional<std::filesystem::path> last_good)
        : std::runtime_error(what), update_(update), last_good_(std::move(last_good)) {}
    std::size_t update() const { return update_; }
    const std::optional<std::filesystem::path>& last_good_checkpoint() const { return last_good_; }

   private:
    std::size_t update_;
    std::optional<std::filesystem::path> last_good_;
};

// With an output directory, writes curves.csv, policy.stgc and periodic
// checkpoints/update_<u>.stgc. Throws io::FormatError if the bundle does not
// match the environment geometry, std::logic_error if the bundle changed.
RlResult train_rl(const RlConfig& config, const models::ModelBundle<float>& bundle,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt, const RlHooks& hooks = {});

}  // namespace stg::rl
