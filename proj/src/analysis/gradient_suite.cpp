// SPDX-License-Identifier: Apache-2.0
#include "stg/analysis/gradient_suite.hpp"

#include <random>

#include "stg/pretrain/pretrain.hpp"
#include "stg/rl/ppo.hpp"

namespace stg::analysis {

namespace {

env::EnvConfig tiny_env(std::uint64_t seed) {
    env::EnvConfig e;
    e.grid = 4;
    e.scale = 2;
    e.horizon = 12;
    e.frame_stack = 2;
    e.seed = seed;
    return e;
}

models::ModelConfig tiny_model() {
    models::ModelConfig c;
    c.conv_channels = {2, 3};
    c.embed_dim = 8;
    c.block_size = 4;
    c.layers = 1;
    c.heads = 2;
    c.mlp_ratio = 2;
    c.critic_widths = {6, 4};
    c.tdr_heads = 2;
    c.tdr_hidden = 5;
    return c;
}

constexpr double kPerturbation = 1e-6;

// Central differences at this step carry about 1e-10 of round-off for O(1)
// losses; the floor keeps that noise well under the tolerance for entries
// whose gradients are themselves near zero.
num::GradCheckOptions suite_options() {
    num::GradCheckOptions o;
    o.abs_floor = 1e-5;
    return o;
}

}  // namespace

std::vector<GradientCheckEntry> run_gradient_suite(std::uint64_t seed) {
    using pretrain::BatchTensors;
    std::vector<GradientCheckEntry> out;

    pretrain::PretrainConfig pc;
    pc.batch_size = 1;
    pc.seq_len = 2;
    pc.tdr_pairs = 2;
    pc.seed = seed;
    pc.model = tiny_model();
    pretrain::Pretrainer trainer(pc, {env::generate_expert_dataset(tiny_env(seed), 3)});
    const auto batch = BatchTensors<double>::from(trainer.sample_batch());
    auto b = trainer.bundle().convert<double>();

    auto check = [&](const std::string& name, const num::LossFn<double>& fn,
                     std::vector<num::ParameterSet<double>*> sets) {
        out.push_back({name, num::gradient_check<double>(fn, sets, kPerturbation, suite_options())});
    };
    check("critic", [&](num::Tape<double>& t) { return pretrain::loss_dis(t, b, batch); }, {&b.critic.params()});
    check("adversarial", [&](num::Tape<double>& t) { return pretrain::loss_gen(t, b, batch).adv; },
          {&b.encoder.params(), &b.transformer.params()});
    check("prediction", [&](num::Tape<double>& t) { return pretrain::loss_gen(t, b, batch).mse; },
          {&b.encoder.params(), &b.transformer.params()});
    check("temporal_distance", [&](num::Tape<double>& t) { return pretrain::loss_tdr(t, b, batch); },
          {&b.encoder.params(), &b.tdr.params()});
    check("generator_total",
          [&](num::Tape<double>& t) {
              return pretrain::generator_objective(t, b, batch, pc.alpha, pc.beta, pc.kappa).total;
          },
          {&b.encoder.params(), &b.transformer.params(), &b.tdr.params()});

    // PPO surrogate with ratios near 1.05, away from the clip edges.
    const auto e = tiny_env(seed);
    rl::PolicyConfig polc;
    polc.frame = {e.frame_height(), e.frame_width(), e.frame_stack};
    polc.conv_channels = {3, 4};
    polc.hidden = 6;
    rl::PolicyNet<double> net(polc, seed);
    const std::size_t n = 6;
    std::mt19937_64 rng(seed ^ 0x5050ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    rl::PpoMinibatch<double> mb;
    mb.states = num::Tensor<double>({n, static_cast<std::size_t>(polc.frame.stack),
                                     static_cast<std::size_t>(polc.frame.height),
                                     static_cast<std::size_t>(polc.frame.width)});
    for (auto& x : mb.states.data) x = u(rng);
    mb.old_log_probs = num::Tensor<double>({n});
    mb.advantages = num::Tensor<double>({n});
    mb.returns = num::Tensor<double>({n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        mb.actions.push_back(i % polc.actions);
        mb.advantages[i] = 2 * u(rng) - 1;
        mb.returns[i] = u(rng);
    }
    {
        num::Tape<double> t(num::TapeMode::Inference);
        const auto lp = num::log_softmax_rows(net.forward(t, t.constant(mb.states)).logits).value();
        for (std::size_t i = 0; i < n; ++i) mb.old_log_probs[i] = lp[i * polc.actions + mb.actions[i]] - 0.05;
    }
    rl::PpoConfig ppo;
    check("ppo", [&](num::Tape<double>& t) { return rl::ppo_loss(t, net, mb, ppo).total; }, {&net.params()});
    return out;
}

}  // namespace stg::analysis
