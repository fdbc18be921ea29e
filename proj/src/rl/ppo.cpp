// SPDX-License-Identifier: Apache-2.0
#include "stg/rl/ppo.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stg/models/bundle.hpp"

namespace stg::rl {

void PpoConfig::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("ppo: gamma must be in (0, 1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("ppo: lambda must be in [0, 1]");
    if (!(clip_ratio > 0.0)) throw std::invalid_argument("ppo: clip ratio must be > 0");
    if (!(entropy_coef >= 0.0) || !(value_coef >= 0.0)) throw std::invalid_argument("ppo: coefficients must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("ppo: learning rate must be > 0");
    if (horizon == 0 || epochs == 0 || minibatch == 0) throw std::invalid_argument("ppo: sizes must be >= 1");
}

void RolloutBuffer::clear() { *this = RolloutBuffer{}; }

void RolloutBuffer::push(env::ObservationState state, std::size_t action, double log_prob, double value,
                         double reward, bool terminal, bool episode_end, double bootstrap_value) {
    states.push_back(std::move(state));
    actions.push_back(action);
    log_probs.push_back(log_prob);
    values.push_back(value);
    rewards.push_back(reward);
    terminals.push_back(terminal);
    episode_ends.push_back(episode_end || terminal);
    bootstrap_values.push_back(bootstrap_value);
}

void RolloutBuffer::check_aligned() const {
    const std::size_t n = states.size();
    if (actions.size() != n || log_probs.size() != n || values.size() != n || rewards.size() != n ||
        terminals.size() != n || episode_ends.size() != n || bootstrap_values.size() != n)
        throw std::invalid_argument("rollout buffer: per-step fields disagree in length");
}

void compute_gae(RolloutBuffer& b, double gamma, double lambda) {
    b.check_aligned();
    const std::size_t n = b.size();
    b.advantages.assign(n, 0.0);
    b.returns.assign(n, 0.0);
    double next_adv = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        const bool cut = b.episode_ends[k] || k + 1 == n;
        double next_value = 0.0;
        if (!b.terminals[k]) next_value = cut ? b.bootstrap_values[k] : b.values[k + 1];
        const double delta = b.rewards[k] + gamma * next_value - b.values[k];
        const double adv = delta + (cut ? 0.0 : gamma * lambda * next_adv);
        b.advantages[k] = adv;
        b.returns[k] = adv + b.values[k];
        next_adv = adv;
    }
}

std::vector<double> normalize_advantages(const std::vector<double>& a) {
    if (a.empty()) return {};
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    var /= static_cast<double>(a.size());
    const double sd = std::sqrt(var);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = sd > 1e-12 ? (a[i] - mean) / sd : a[i] - mean;
    return out;
}

template <typename T>
PpoLoss<T> ppo_loss(Tape<T>& tape, const PolicyNet<T>& net, const PpoMinibatch<T>& b, const PpoConfig& cfg) {
    const std::size_t n = b.actions.size();
    if (n == 0 || b.old_log_probs.size() != n || b.advantages.size() != n || b.returns.size() != n)
        throw std::invalid_argument("ppo_loss: minibatch fields disagree in length");
    auto out = net.forward(tape, tape.constant(b.states));
    Var<T> logp_all = num::log_softmax_rows(out.logits);
    Var<T> logp = num::pick(logp_all, b.actions);
    Var<T> ratio = num::exp(num::sub(logp, tape.constant(b.old_log_probs)));
    Var<T> adv = tape.constant(b.advantages);
    const T eps = static_cast<T>(cfg.clip_ratio);
    Var<T> surr1 = num::mul(ratio, adv);
    Var<T> surr2 = num::mul(num::clamp(ratio, T(1) - eps, T(1) + eps), adv);
    Var<T> policy = num::scale(num::mean(num::minimum(surr1, surr2)), T(-1));
    Var<T> value = num::mse(out.value, tape.constant(b.returns));
    Var<T> neg_ent_sum = num::sum(num::mul(num::softmax_rows(out.logits), logp_all));
    Var<T> entropy = num::scale(neg_ent_sum, T(-1) / static_cast<T>(n));
    Var<T> total = num::add(num::add(policy, num::scale(value, static_cast<T>(cfg.value_coef))),
                            num::scale(entropy, static_cast<T>(-cfg.entropy_coef)));

    PpoLoss<T> loss{total, policy, value, entropy, 0.0, 0.0};
    const auto& r = ratio.value();
    const auto& lp = logp.value();
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(static_cast<double>(r[i]))) throw num::NumericalError("ppo: non-finite probability ratio");
        if (std::abs(static_cast<double>(r[i]) - 1.0) > cfg.clip_ratio) loss.clip_fraction += 1.0;
        loss.approx_kl += static_cast<double>(b.old_log_probs[i] - lp[i]);
    }
    loss.clip_fraction /= static_cast<double>(n);
    loss.approx_kl /= static_cast<double>(n);
    return loss;
}

template PpoLoss<float> ppo_loss<float>(Tape<float>&, const PolicyNet<float>&, const PpoMinibatch<float>&,
                                        const PpoConfig&);
template PpoLoss<double> ppo_loss<double>(Tape<double>&, const PolicyNet<double>&, const PpoMinibatch<double>&,
                                          const PpoConfig&);

PpoStats ppo_update(const RolloutBuffer& buffer, PolicyNet<float>& net, num::Optimizer<float>& optimizer,
                    const PpoConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    buffer.check_aligned();
    const std::size_t n = buffer.size();
    if (n == 0 || buffer.advantages.size() != n || buffer.returns.size() != n)
        throw std::invalid_argument("ppo_update: advantages not computed");
    const auto adv = normalize_advantages(buffer.advantages);
    std::vector<std::size_t> order(n);
    PpoStats stats;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        for (std::size_t start = 0; start < n; start += cfg.minibatch) {
            const std::size_t m = std::min(cfg.minibatch, n - start);
            PpoMinibatch<float> mb;
            std::vector<env::ObservationState> states;
            mb.old_log_probs = Tensor<float>({m});
            mb.advantages = Tensor<float>({m});
            mb.returns = Tensor<float>({m, 1});
            for (std::size_t j = 0; j < m; ++j) {
                const std::size_t k = order[start + j];
                states.push_back(buffer.states[k]);
                mb.actions.push_back(buffer.actions[k]);
                mb.old_log_probs[j] = static_cast<float>(buffer.log_probs[k]);
                mb.advantages[j] = static_cast<float>(adv[k]);
                mb.returns[j] = static_cast<float>(buffer.returns[k]);
            }
            mb.states = models::states_to_tensor<float>(states);

            Tape<float> tape;
            auto loss = ppo_loss(tape, net, mb, cfg);
            if (!std::isfinite(loss.total.item())) throw num::NumericalError("ppo: non-finite loss");
            net.params().mark_grads_ready();
            tape.backward(loss.total);
            num::ParameterSet<float>* sets[] = {&net.params()};
            num::clip_grad_norm<float>(sets, cfg.max_grad_norm);
            optimizer.step(sets);

            stats.policy_loss += loss.policy.item();
            stats.value_loss += loss.value.item();
            stats.entropy += loss.entropy.item();
            stats.clip_fraction += loss.clip_fraction;
            stats.approx_kl += loss.approx_kl;
            ++stats.minibatches;
        }
    }
    const double k = static_cast<double>(stats.minibatches);
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    return stats;
}

}  // namespace stg::rl
