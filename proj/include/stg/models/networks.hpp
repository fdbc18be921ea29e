// SPDX-License-Identifier: Apache-2.0
#pragma once

// The four networks of a State-to-Go model bundle:
//   Encoder                     stacked frames -> embedding
//   StgTransformer              causal next-embedding predictor (residual)
//   Critic                      directed transition (e, e') -> score
//   TemporalDistanceRegressor   (e_i, e_j) -> symlog temporal distance

#include <random>
#include <vector>

#include "stg/env/grid_env.hpp"
#include "stg/models/layers.hpp"

namespace stg::models {

struct ModelConfig {
    env::FrameGeometry frame{32, 32, 4};
    std::vector<std::size_t> conv_channels{8, 16, 32};
    std::size_t conv_kernel = 3;
    std::size_t conv_stride = 2;
    std::size_t conv_padding = 1;
    std::size_t embed_dim = 64;
    std::size_t block_size = 16;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t mlp_ratio = 4;
    std::vector<std::size_t> critic_widths{128, 64, 32};
    std::size_t tdr_heads = 2;
    std::size_t tdr_hidden = 64;
    double tdr_segment_init = 0.5;  // std of the two learned segment embeddings
    // Project critic weight matrices to spectral norm <= 1 after each critic update.
    bool critic_spectral_norm = false;

    void validate() const;
    // Spatial size after the conv stack, per side.
    std::size_t conv_out_height() const;
    std::size_t conv_out_width() const;
};

template <typename T>
class Encoder {
   public:
    Encoder(const ModelConfig& config, std::mt19937_64& rng);

    // pixels: (B, k, H, W) in [0, 1] -> (B, d)
    Var<T> forward(Tape<T>& tape, Var<T> pixels) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

   private:
    ModelConfig config_;
    ParameterSet<T> params_{"encoder"};
    std::vector<Conv2d<T>> convs_;
    Linear<T> head_;
};

template <typename T>
class StgTransformer {
   public:
    StgTransformer(const ModelConfig& config, std::mt19937_64& rng);

    // tokens: (groups * seq, d) embeddings e_t..e_{t+seq-1} per group.
    // Returns predictions for e_{t+1}..e_{t+seq}: tokens + decoder delta.
    Var<T> forward(Tape<T>& tape, Var<T> tokens, std::size_t seq) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }
    Parameter<T>& decoder_weight() { return *decoder_.weight; }
    Parameter<T>& decoder_bias() { return *decoder_.bias; }
    std::size_t block_size() const { return config_.block_size; }

   private:
    struct Block {
        Linear<T> query, key, value, proj;
        LayerNorm<T> norm1;
        Linear<T> fc1, fc2;
        LayerNorm<T> norm2;
    };

    ModelConfig config_;
    ParameterSet<T> params_{"transformer"};
    Parameter<T>* positions_ = nullptr;
    std::vector<Block> blocks_;
    Linear<T> decoder_;
};

template <typename T>
class Critic {
   public:
    Critic(const ModelConfig& config, std::mt19937_64& rng);

    // from, to: (N, d) -> (N, 1)
    Var<T> forward(Tape<T>& tape, Var<T> from, Var<T> to) const;

    // Clamps every critic parameter into [lo, hi].
    void clip_weights(T lo, T hi);
    // Rescales each weight matrix whose largest singular value exceeds 1.
    void spectral_normalize(int power_iterations = 20);
    std::size_t depth() const { return layers_.size(); }
    std::vector<std::size_t> widths() const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

   private:
    ModelConfig config_;
    ParameterSet<T> params_{"critic"};
    std::vector<Linear<T>> layers_;
};

template <typename T>
class TemporalDistanceRegressor {
   public:
    TemporalDistanceRegressor(const ModelConfig& config, std::mt19937_64& rng);

    // from, to: (N, d) -> (N, 1) predicted symlog distance from `from` to `to`.
    Var<T> forward(Tape<T>& tape, Var<T> from, Var<T> to) const;

    ParameterSet<T>& params() { return params_; }
    const ParameterSet<T>& params() const { return params_; }

   private:
    ModelConfig config_;
    ParameterSet<T> params_{"tdr"};
    Parameter<T>* segments_ = nullptr;
    Linear<T> query_, key_, value_, proj_;
    LayerNorm<T> norm_;
    Linear<T> fc1_, fc2_;
};

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class StgTransformer<float>;
extern template class StgTransformer<double>;
extern template class Critic<float>;
extern template class Critic<double>;
extern template class TemporalDistanceRegressor<float>;
extern template class TemporalDistanceRegressor<double>;

}  // namespace stg::models
