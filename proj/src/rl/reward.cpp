// SPDX-License-Identifier: Apache-2.0
#include "stg/rl/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stg/io/binary.hpp"

namespace stg::rl {

std::string to_string(RewardKind kind) {
    switch (kind) {
        case RewardKind::Stg: return "stg";
        case RewardKind::GuideOnly: return "guide-only";
        case RewardKind::WithProgression: return "with-progression";
    }
    return "?";
}

RewardKind reward_kind_from_string(const std::string& name) {
    if (name == "stg") return RewardKind::Stg;
    if (name == "guide-only" || name == "guide_only") return RewardKind::GuideOnly;
    if (name == "with-progression" || name == "with_progression") return RewardKind::WithProgression;
    throw std::invalid_argument("unknown reward mode '" + name + "' (stg, guide-only, with-progression)");
}

void RewardMode::validate() const {
    if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("reward mode: eta must be > 0");
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw std::invalid_argument("reward mode: nu must be >= 0");
    if (kind != RewardKind::WithProgression && nu != 0.0)
        throw std::invalid_argument("reward mode: nu is only used by with-progression");
}

void RunningNormalizer::update(double x) {
    ++count_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(count_);
    m2_ += delta * (x - mean_);
}

double RunningNormalizer::normalize(double x) {
    update(x);
    const double sd = std::sqrt(std::max(variance(), floor_));
    return std::clamp((x - mean_) / sd, lo_, hi_);
}

namespace {

Tensor<float> row(const Tensor<float>& t, std::size_t r) {
    const std::size_t d = t.shape.at(1);
    Tensor<float> out({1, d});
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(r * d),
              t.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * d), out.data.begin());
    return out;
}

}  // namespace

double intrinsic_reward(const models::ModelBundle<float>& bundle, const env::ObservationState& s,
                        const env::ObservationState& next) {
    IntrinsicRewarder rewarder(bundle, RewardMode{}, 1);
    rewarder.begin_episode(s);
    const auto scores = rewarder.observe(next);
    return scores.guide - scores.base;
}

IntrinsicRewarder::IntrinsicRewarder(const models::ModelBundle<float>& bundle, RewardMode mode, std::size_t context)
    : bundle_(bundle), mode_(mode), context_(context) {
    mode_.validate();
    if (context_ == 0 || context_ > bundle_.config.block_size)
        throw std::invalid_argument("reward context must be in [1, block_size]");
}

void IntrinsicRewarder::check_geometry(const env::FrameGeometry& g) const {
    const auto& f = bundle_.config.frame;
    if (!(g == f))
        throw io::FormatError(io::FormatError::Kind::Geometry,
                              "environment frames " + std::to_string(g.height) + "x" + std::to_string(g.width) + "x" +
                                  std::to_string(g.stack) + " do not match the bundle's " +
                                  std::to_string(f.height) + "x" + std::to_string(f.width) + "x" +
                                  std::to_string(f.stack));
}

void IntrinsicRewarder::begin_episode(const env::ObservationState& s) {
    check_geometry(s.geometry);
    history_.clear();
    history_.push_back(models::encode(bundle_, {s}));
}

TransitionScores IntrinsicRewarder::observe(const env::ObservationState& next) {
    if (history_.empty()) throw std::logic_error("IntrinsicRewarder::observe before begin_episode");
    check_geometry(next.geometry);
    const std::size_t d = bundle_.config.embed_dim;
    const std::size_t len = history_.size();
    Tensor<float> ctx({len, d});
    for (std::size_t i = 0; i < len; ++i)
        std::copy(history_[i].data.begin(), history_[i].data.end(), ctx.data.begin() + static_cast<std::ptrdiff_t>(i * d));
    const Tensor<float> predicted = row(models::predict_next(bundle_, ctx, len), len - 1);
    const Tensor<float>& current = history_.back();
    Tensor<float> e_next = models::encode(bundle_, {next});

    TransitionScores s;
    Tensor<float> from({2, d}), to({2, d});
    std::copy(current.data.begin(), current.data.end(), from.data.begin());
    std::copy(current.data.begin(), current.data.end(), from.data.begin() + static_cast<std::ptrdiff_t>(d));
    std::copy(e_next.data.begin(), e_next.data.end(), to.data.begin());
    std::copy(predicted.data.begin(), predicted.data.end(), to.data.begin() + static_cast<std::ptrdiff_t>(d));
    const auto scores = models::critic_scores(bundle_, from, to);
    s.guide = scores[0];
    s.base = scores[1];
    if (mode_.kind == RewardKind::WithProgression) s.progression = models::tdr_scores(bundle_, current, e_next)[0];

    history_.push_back(std::move(e_next));
    while (history_.size() > context_) history_.pop_front();
    return s;
}

double IntrinsicRewarder::reward(const TransitionScores& s) {
    switch (mode_.kind) {
        case RewardKind::Stg: return mode_.eta * (s.guide - s.base);
        case RewardKind::GuideOnly: return mode_.eta * normalizer_.normalize(s.guide);
        case RewardKind::WithProgression: return mode_.eta * (s.guide - s.base) + mode_.nu * s.progression;
    }
    return 0.0;
}

}  // namespace stg::rl
