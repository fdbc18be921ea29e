// SPDX-License-Identifier: Apache-2.0
#pragma once

// Intrinsic rewards computed from a frozen model bundle. The bundle is only
// read; nothing here records gradients.

#include <cstddef>
#include <deque>
#include <string>

#include "stg/env/grid_env.hpp"
#include "stg/models/bundle.hpp"

namespace stg::rl {

using num::Tensor;

enum class RewardKind {
    Stg,              // eta * (D(e, e') - D(e, T(e)))
    GuideOnly,        // eta * clamp(normalize(D(e, e')))
    WithProgression,  // eta * (D(e, e') - D(e, T(e))) + nu * P(e, e')
};

std::string to_string(RewardKind kind);
// Accepts "stg", "guide-only"/"guide_only", "with-progression"/"with_progression".
RewardKind reward_kind_from_string(const std::string& name);

struct RewardMode {
    RewardKind kind = RewardKind::Stg;
    double eta = 1.0;
    double nu = 0.0;

    void validate() const;
};

// Running mean and variance of a scalar stream (Welford). Each call to
// normalize first absorbs the sample, then standardizes and clamps it, so
// the very first sample maps to 0.
class RunningNormalizer {
   public:
    explicit RunningNormalizer(double lo = -1.0, double hi = 1.0, double variance_floor = 1e-8)
        : lo_(lo), hi_(hi), floor_(variance_floor) {}

    void update(double x);
    double normalize(double x);  // update, then standardize and clamp

    std::size_t count() const { return count_; }
    double mean() const { return mean_; }
    double variance() const { return count_ ? m2_ / static_cast<double>(count_) : 0.0; }

   private:
    double lo_, hi_, floor_;
    std::size_t count_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

// The raw network outputs for one transition.
struct TransitionScores {
    double guide = 0;        // D(e_t, e_{t+1})
    double base = 0;         // D(e_t, T(context)), the prediction's score
    double progression = 0;  // P(e_t, e_{t+1})
};

// Scores D(e, e') - D(e, T(e)) for a single transition whose prediction uses
// only the current state.
double intrinsic_reward(const models::ModelBundle<float>& bundle, const env::ObservationState& s,
                        const env::ObservationState& next);

// Stateful scorer for a live episode. The prediction for e_{t+1} is the
// transformer's last output over the most recent `context` embeddings.
class IntrinsicRewarder {
   public:
    IntrinsicRewarder(const models::ModelBundle<float>& bundle, RewardMode mode, std::size_t context = 1);

    // Checks that the environment renders frames the bundle was trained on.
    void check_geometry(const env::FrameGeometry& geometry) const;

    // Starts a new episode at state s.
    void begin_episode(const env::ObservationState& s);
    // Scores the transition from the current state to `next`, then advances.
    TransitionScores observe(const env::ObservationState& next);
    // Combines scores according to the mode; guide_only consumes the normalizer.
    double reward(const TransitionScores& scores);

    const RewardMode& mode() const { return mode_; }
    const RunningNormalizer& normalizer() const { return normalizer_; }

   private:
    const models::ModelBundle<float>& bundle_;
    RewardMode mode_;
    std::size_t context_;
    RunningNormalizer normalizer_;
    std::deque<Tensor<float>> history_;  // (1, d) embeddings, oldest first
};

}  // namespace stg::rl
