// SPDX-License-Identifier: Apache-2.0
#include "stg/rl/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "stg/models/bundle.hpp"

namespace stg::rl {

namespace {

std::size_t conv_out(std::size_t n, const PolicyConfig& c) {
    for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
        if (n + 2 * c.conv_padding < c.conv_kernel) return 0;
        n = (n + 2 * c.conv_padding - c.conv_kernel) / c.conv_stride + 1;
    }
    return n;
}

}  // namespace

void PolicyConfig::validate() const {
    if (frame.height <= 0 || frame.width <= 0 || frame.stack <= 0) throw std::invalid_argument("policy: bad frame");
    if (conv_channels.empty() || hidden == 0 || actions < 2) throw std::invalid_argument("policy: bad layer sizes");
    if (conv_out(static_cast<std::size_t>(frame.height), *this) == 0 ||
        conv_out(static_cast<std::size_t>(frame.width), *this) == 0)
        throw std::invalid_argument("policy: conv stack collapses the frame");
}

template <typename T>
PolicyNet<T>::PolicyNet(const PolicyConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 5u};
    std::mt19937_64 rng(seq);
    std::size_t in = static_cast<std::size_t>(config_.frame.stack);
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
        convs_.emplace_back(params_, "conv" + std::to_string(i + 1), in, config_.conv_channels[i], config_.conv_kernel,
                            config_.conv_stride, config_.conv_padding, rng);
        in = config_.conv_channels[i];
    }
    const std::size_t flat = in * conv_out(static_cast<std::size_t>(config_.frame.height), config_) *
                             conv_out(static_cast<std::size_t>(config_.frame.width), config_);
    hidden_ = Linear<T>(params_, "hidden", flat, config_.hidden, rng);
    pi_ = Linear<T>(params_, "pi", config_.hidden, config_.actions, rng);
    v_ = Linear<T>(params_, "value", config_.hidden, 1, rng);
    // A small policy head starts the policy close to uniform.
    for (auto& w : pi_.weight->value.data) w *= T(0.01);
    pi_.bias->value.fill(T(0));
}

template <typename T>
PolicyOutput<T> PolicyNet<T>::forward(Tape<T>& tape, Var<T> pixels) const {
    const num::Shape s = pixels.shape();
    if (s.size() != 4 || s[1] != static_cast<std::size_t>(config_.frame.stack) ||
        s[2] != static_cast<std::size_t>(config_.frame.height) || s[3] != static_cast<std::size_t>(config_.frame.width))
        throw num::ShapeError("policy: state geometry " + num::shape_str(s) + " does not match the network");
    Var<T> x = pixels;
    for (const auto& conv : convs_) x = num::relu(conv(tape, x));
    x = num::reshape(x, {s[0], x.value().size() / s[0]});
    x = num::relu(hidden_(tape, x));
    return {pi_(tape, x), v_(tape, x)};
}

template <typename T>
PolicyEval<T> evaluate_policy(const PolicyNet<T>& net, const std::vector<env::ObservationState>& states) {
    Tape<T> tape(num::TapeMode::Inference);
    auto out = net.forward(tape, tape.constant(models::states_to_tensor<T>(states)));
    const Tensor<T> p = num::softmax_rows(out.logits).value();
    const Tensor<T>& v = out.value.value();
    const std::size_t a = net.config().actions;
    PolicyEval<T> eval;
    for (std::size_t r = 0; r < states.size(); ++r) {
        eval.probs.emplace_back(p.data.begin() + static_cast<std::ptrdiff_t>(r * a),
                                p.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * a));
        eval.values.push_back(static_cast<double>(v[r]));
    }
    return eval;
}

template class PolicyNet<float>;
template class PolicyNet<double>;
template PolicyEval<float> evaluate_policy<float>(const PolicyNet<float>&, const std::vector<env::ObservationState>&);
template PolicyEval<double> evaluate_policy<double>(const PolicyNet<double>&, const std::vector<env::ObservationState>&);

}  // namespace stg::rl
