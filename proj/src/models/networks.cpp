// SPDX-License-Identifier: Apache-2.0
#include "stg/models/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace stg::models {

void ModelConfig::validate() const {
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
        throw std::invalid_argument("embedding dim must be divisible by the head count");
    if (tdr_heads == 0 || embed_dim % tdr_heads != 0)
        throw std::invalid_argument("embedding dim must be divisible by the TDR head count");
    if (block_size == 0 || layers == 0) throw std::invalid_argument("block size and layers must be >= 1");
    if (conv_channels.empty()) throw std::invalid_argument("encoder needs at least one conv layer");
    if (critic_widths.empty()) throw std::invalid_argument("critic needs at least one hidden layer");
    if (frame.height <= 0 || frame.width <= 0 || frame.stack <= 0) throw std::invalid_argument("bad frame geometry");
    if (!(tdr_segment_init > 0) || !std::isfinite(tdr_segment_init))
        throw std::invalid_argument("TDR segment init must be positive");
    if (conv_out_height() == 0 || conv_out_width() == 0) throw std::invalid_argument("conv stack collapses the frame");
}

std::size_t ModelConfig::conv_out_height() const {
    std::size_t h = static_cast<std::size_t>(frame.height);
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (h + 2 * conv_padding < conv_kernel) return 0;
        h = (h + 2 * conv_padding - conv_kernel) / conv_stride + 1;
    }
    return h;
}

std::size_t ModelConfig::conv_out_width() const {
    std::size_t w = static_cast<std::size_t>(frame.width);
    for (std::size_t i = 0; i < conv_channels.size(); ++i) {
        if (w + 2 * conv_padding < conv_kernel) return 0;
        w = (w + 2 * conv_padding - conv_kernel) / conv_stride + 1;
    }
    return w;
}

// --- Encoder -----------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    std::size_t in = static_cast<std::size_t>(config_.frame.stack);
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
        convs_.emplace_back(params_, "conv" + std::to_string(i + 1), in, config_.conv_channels[i],
                            config_.conv_kernel, config_.conv_stride, config_.conv_padding, rng);
        in = config_.conv_channels[i];
    }
    const std::size_t flat = in * config_.conv_out_height() * config_.conv_out_width();
    head_ = Linear<T>(params_, "head", flat, config_.embed_dim, rng);
}

template <typename T>
Var<T> Encoder<T>::forward(Tape<T>& tape, Var<T> pixels) const {
    const num::Shape s = pixels.shape();
    if (s.size() != 4 || s[1] != static_cast<std::size_t>(config_.frame.stack) ||
        s[2] != static_cast<std::size_t>(config_.frame.height) ||
        s[3] != static_cast<std::size_t>(config_.frame.width)) {
        throw num::ShapeError("encoder: state geometry " + num::shape_str(s) + " does not match (B, " +
                              std::to_string(config_.frame.stack) + ", " + std::to_string(config_.frame.height) +
                              ", " + std::to_string(config_.frame.width) + ")");
    }
    Var<T> x = pixels;
    for (const auto& conv : convs_) x = num::relu(conv(tape, x));
    const std::size_t batch = s[0];
    x = num::reshape(x, {batch, x.value().size() / batch});
    return head_(tape, x);
}

// --- STG transformer ---------------------------------------------------------

template <typename T>
StgTransformer<T>::StgTransformer(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    const std::size_t d = config_.embed_dim;
    positions_ = &params_.add("positions", num::normal_init<T>({config_.block_size, d}, 0.02, rng));
    for (std::size_t l = 0; l < config_.layers; ++l) {
        const std::string p = "block" + std::to_string(l);
        Block b;
        b.query = Linear<T>(params_, p + ".query", d, d, rng);
        b.key = Linear<T>(params_, p + ".key", d, d, rng);
        b.value = Linear<T>(params_, p + ".value", d, d, rng);
        b.proj = Linear<T>(params_, p + ".proj", d, d, rng);
        b.norm1 = LayerNorm<T>(params_, p + ".norm1", d);
        b.fc1 = Linear<T>(params_, p + ".fc1", d, d * config_.mlp_ratio, rng);
        b.fc2 = Linear<T>(params_, p + ".fc2", d * config_.mlp_ratio, d, rng);
        b.norm2 = LayerNorm<T>(params_, p + ".norm2", d);
        blocks_.push_back(b);
    }
    decoder_ = Linear<T>(params_, "decoder", d, d, rng);
}

template <typename T>
Var<T> StgTransformer<T>::forward(Tape<T>& tape, Var<T> tokens, std::size_t seq) const {
    if (seq == 0) throw std::invalid_argument("transformer: empty sequence");
    if (seq > config_.block_size)
        throw std::invalid_argument("transformer: sequence length " + std::to_string(seq) +
                                    " exceeds block size " + std::to_string(config_.block_size));
    if (tokens.shape().size() != 2 || tokens.shape()[1] != config_.embed_dim || tokens.shape()[0] % seq != 0)
        throw num::ShapeError("transformer: tokens " + num::shape_str(tokens.shape()) +
                              " are not whole sequences of length " + std::to_string(seq));
    Var<T> x = num::add_rows(tokens, num::slice_rows(tape.param(*positions_), 0, seq));
    for (const auto& b : blocks_) {
        // Post-norm residual blocks.
        Var<T> att = num::attention(b.query(tape, x), b.key(tape, x), b.value(tape, x), seq, config_.heads, true);
        x = b.norm1(tape, num::add(x, b.proj(tape, att)));
        Var<T> mlp = b.fc2(tape, num::gelu(b.fc1(tape, x)));
        x = b.norm2(tape, num::add(x, mlp));
    }
    return num::add(tokens, decoder_(tape, x));
}

// --- Critic ------------------------------------------------------------------

template <typename T>
Critic<T>::Critic(const ModelConfig& config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    std::size_t in = 2 * config_.embed_dim;
    for (std::size_t i = 0; i < config_.critic_widths.size(); ++i) {
        layers_.emplace_back(params_, "fc" + std::to_string(i + 1), in, config_.critic_widths[i], rng);
        in = config_.critic_widths[i];
    }
    layers_.emplace_back(params_, "out", in, 1, rng);
}

template <typename T>
Var<T> Critic<T>::forward(Tape<T>& tape, Var<T> from, Var<T> to) const {
    const std::size_t d = config_.embed_dim;
    if (from.shape().size() != 2 || from.shape()[1] != d || from.shape() != to.shape())
        throw num::ShapeError("critic: embeddings " + num::shape_str(from.shape()) + " and " +
                              num::shape_str(to.shape()) + " must both be (N, " + std::to_string(d) + ")");
    Var<T> x = num::concat_cols(from, to);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) x = num::relu(layers_[i](tape, x));
    return layers_.back()(tape, x);
}

template <typename T>
void Critic<T>::clip_weights(T lo, T hi) {
    for (auto& p : params_)
        for (T& w : p->value.data) w = std::clamp(w, lo, hi);
}

template <typename T>
void Critic<T>::spectral_normalize(int power_iterations) {
    for (auto& layer : layers_) {
        auto& w = layer.weight->value;
        const std::size_t rows = w.shape[0], cols = w.shape[1];
        std::vector<double> u(rows, 1.0 / std::sqrt(static_cast<double>(rows))), v(cols);
        double sigma = 0;
        for (int it = 0; it < power_iterations; ++it) {
            double nv = 0;
            for (std::size_t c = 0; c < cols; ++c) {
                double acc = 0;
                for (std::size_t r = 0; r < rows; ++r) acc += w[r * cols + c] * u[r];
                v[c] = acc;
                nv += acc * acc;
            }
            nv = std::sqrt(nv);
            if (nv == 0) break;
            for (auto& x : v) x /= nv;
            double nu = 0;
            for (std::size_t r = 0; r < rows; ++r) {
                double acc = 0;
                for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c] * v[c];
                u[r] = acc;
                nu += acc * acc;
            }
            sigma = std::sqrt(nu);
            if (sigma == 0) break;
            for (auto& x : u) x /= sigma;
        }
        if (sigma > 1.0)
            for (T& x : w.data) x = static_cast<T>(x / sigma);
    }
}

template <typename T>
std::vector<std::size_t> Critic<T>::widths() const {
    std::vector<std::size_t> out{layers_.front().in()};
    for (const auto& l : layers_) out.push_back(l.out());
    return out;
}

// --- TDR ---------------------------------------------------------------------

template <typename T>
TemporalDistanceRegressor<T>::TemporalDistanceRegressor(const ModelConfig& config, std::mt19937_64& rng)
    : config_(config) {
    config_.validate();
    const std::size_t d = config_.embed_dim;
    segments_ = &params_.add("segments", num::normal_init<T>({2, d}, static_cast<T>(config_.tdr_segment_init), rng));
    query_ = Linear<T>(params_, "query", d, d, rng);
    key_ = Linear<T>(params_, "key", d, d, rng);
    value_ = Linear<T>(params_, "value", d, d, rng);
    proj_ = Linear<T>(params_, "proj", d, d, rng);
    norm_ = LayerNorm<T>(params_, "norm", d);
    fc1_ = Linear<T>(params_, "fc1", d, config_.tdr_hidden, rng);
    fc2_ = Linear<T>(params_, "fc2", config_.tdr_hidden, 1, rng);
}

template <typename T>
Var<T> TemporalDistanceRegressor<T>::forward(Tape<T>& tape, Var<T> from, Var<T> to) const {
    const std::size_t d = config_.embed_dim;
    if (from.shape().size() != 2 || from.shape()[1] != d || from.shape() != to.shape())
        throw num::ShapeError("tdr: embeddings " + num::shape_str(from.shape()) + " and " +
                              num::shape_str(to.shape()) + " must both be (N, " + std::to_string(d) + ")");
    const std::size_t n = from.shape()[0];
    // Each pair becomes a two-token sequence [from, to] with learned segment embeddings.
    Var<T> x = num::reshape(num::concat_cols(from, to), {2 * n, d});
    x = num::add_rows(x, tape.param(*segments_));
    Var<T> att = num::attention(query_(tape, x), key_(tape, x), value_(tape, x), 2, config_.tdr_heads, false);
    x = norm_(tape, num::add(x, proj_(tape, att)));
    Var<T> pooled = num::group_mean(x, 2);
    return fc2_(tape, num::relu(fc1_(tape, pooled)));
}

template class Encoder<float>;
template class Encoder<double>;
template class StgTransformer<float>;
template class StgTransformer<double>;
template class Critic<float>;
template class Critic<double>;
template class TemporalDistanceRegressor<float>;
template class TemporalDistanceRegressor<double>;

}  // namespace stg::models
