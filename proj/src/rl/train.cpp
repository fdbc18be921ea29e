// SPDX-License-Identifier: Apache-2.0
#include "stg/rl/train.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "stg/io/binary.hpp"
#include "stg/numerics/checkpoint.hpp"

namespace stg::rl {

void RlConfig::validate() const {
    env.validate();
    reward.validate();
    ppo.validate();
    if (total_steps == 0) throw std::invalid_argument("rl: total steps must be >= 1");
    if (reward_context == 0) throw std::invalid_argument("rl: reward context must be >= 1");
    if (eval_every == 0 || eval_episodes == 0) throw std::invalid_argument("rl: evaluation cadence must be >= 1");
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t kEvalStream = 0x6576616C75617465ULL;
constexpr std::uint64_t kTrainStream = 0x747261696E696E67ULL;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t sample_categorical(const std::vector<double>& p, std::mt19937_64& rng) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t a = 0; a < p.size(); ++a) {
        acc += p[a];
        if (u < acc) return a;
    }
    return p.size() - 1;
}

std::size_t argmax(const std::vector<double>& p) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < p.size(); ++a)
        if (p[a] > p[best]) best = a;
    return best;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
    double s = 0;
    for (double x : v) s += (x - mean) * (x - mean);
    return v.empty() ? 0.0 : std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

EvalReport evaluate_controller(const Controller& controller, const env::EnvConfig& env_config, std::size_t episodes,
                               std::uint64_t seed) {
    if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be >= 1");
    env::GridEnv env(env_config);
    EvalReport report;
    report.episodes = episodes;
    std::vector<double> successes;
    double steps = 0;
    for (std::size_t ep = 0; ep < episodes; ++ep) {
        auto state = env.reset(splitmix64(seed ^ kEvalStream) + ep);
        bool success = false;
        while (!env.done()) {
            auto r = env.step(controller(env, state));
            success = r.success;
            state = std::move(r.state);
        }
        steps += env.steps_taken();
        report.returns.push_back(success ? 1.0 : 0.0);
        successes.push_back(success ? 1.0 : 0.0);
    }
    report.success_rate = mean_of(successes);
    report.success_std = std_of(successes, report.success_rate);
    report.mean_return = mean_of(report.returns);
    report.return_std = std_of(report.returns, report.mean_return);
    report.mean_length = steps / static_cast<double>(episodes);
    return report;
}

EvalReport evaluate(const PolicyNet<float>& policy, const env::EnvConfig& env_config, std::size_t episodes,
                    std::uint64_t seed) {
    return evaluate_controller(
        [&](const env::GridEnv&, const env::ObservationState& s) {
            return static_cast<env::Action>(argmax(evaluate_policy(policy, {s}).probs[0]));
        },
        env_config, episodes, seed);
}

std::string curve_csv_header() { return "update,env_steps,mean_intrinsic_reward,eval_success,eval_return,entropy"; }

std::string curve_csv_row(const CurvePoint& p) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.9g,%.9g,%.9g,%.9g", p.update, p.env_steps, p.mean_intrinsic_reward,
                  p.eval_success, p.eval_return, p.entropy);
    return buf;
}

RlResult train_rl(const RlConfig& config_in, const models::ModelBundle<float>& bundle,
                  const std::optional<std::filesystem::path>& out_dir, const RlHooks& hooks) {
    RlConfig config = config_in;
    config.validate();
    env::GridEnv env(config.env);
    config.policy.frame = env.geometry();

    IntrinsicRewarder rewarder(bundle, config.reward, config.reward_context);
    rewarder.check_geometry(env.geometry());
    const std::string hash_before = models::bundle_hash(bundle);

    PolicyNet<float> policy(config.policy, config.seed);
    num::Optimizer<float> optimizer(num::OptimizerConfig::adamw(config.ppo.learning_rate, 0.0));
    std::mt19937_64 rng(splitmix64(config.seed ^ kTrainStream));

    std::vector<CurvePoint> curve;
    std::string csv = curve_csv_header() + "\n";
    std::optional<std::filesystem::path> last_good;
    if (out_dir) std::filesystem::create_directories(*out_dir);
    auto flush_csv = [&] {
        if (out_dir) io::write_text_atomic(*out_dir / "curves.csv", csv);
    };
    auto save_policy = [&](const std::filesystem::path& path) {
        const num::ParameterSet<float>* sets[] = {&policy.params()};
        num::save_checkpoint(path, sets);
    };

    auto state = env.reset(rng());
    rewarder.begin_episode(state);
    std::size_t steps = 0;
    double reward_sum = 0;
    std::size_t reward_count = 0;
    RolloutBuffer buffer;
    const std::size_t updates = config.updates();

    for (std::size_t u = 1; u <= updates; ++u) {
        UpdateReport report;
        try {
            buffer.clear();
            double rollout_reward = 0;
            for (std::size_t t = 0; t < config.ppo.horizon; ++t) {
                const auto pe = evaluate_policy(policy, {state});
                const std::size_t action = sample_categorical(pe.probs[0], rng);
                auto result = env.step(static_cast<env::Action>(action));
                const double r = rewarder.reward(rewarder.observe(result.state));
                if (!std::isfinite(r)) throw num::NumericalError("non-finite intrinsic reward");
                rollout_reward += r;
                const bool terminal = result.success;
                const bool end = result.done;
                const bool last = t + 1 == config.ppo.horizon;
                double bootstrap = 0.0;
                if (!terminal && (end || last)) bootstrap = evaluate_policy(policy, {result.state}).values[0];
                buffer.push(std::move(state), action, std::log(std::max(pe.probs[0][action], 1e-30)), pe.values[0], r,
                            terminal, end, bootstrap);
                ++steps;
                if (end) {
                    state = env.reset(rng());
                    rewarder.begin_episode(state);
                } else {
                    state = std::move(result.state);
                }
            }
            compute_gae(buffer, config.ppo.gamma, config.ppo.lambda);
            report.ppo = ppo_update(buffer, policy, optimizer, config.ppo, rng);
            report.update = u;
            report.env_steps = steps;
            report.mean_intrinsic_reward = rollout_reward / static_cast<double>(config.ppo.horizon);
            reward_sum += rollout_reward;
            reward_count += config.ppo.horizon;
        } catch (const num::NumericalError& err) {
            flush_csv();
            throw RlAborted("rl training aborted at update " + std::to_string(u) + ": " + err.what() +
                                (last_good ? "; last good checkpoint: " + last_good->string()
                                           : "; no checkpoint written yet"),
                            u, last_good);
        }
        if (hooks.after_update) hooks.after_update(report);

        if (u % config.eval_every == 0 || u == updates) {
            const auto ev = evaluate(policy, config.env, config.eval_episodes, config.seed);
            CurvePoint p;
            p.update = u;
            p.env_steps = steps;
            p.mean_intrinsic_reward = reward_count ? reward_sum / static_cast<double>(reward_count) : 0.0;
            p.eval_success = ev.success_rate;
            p.eval_return = ev.mean_return;
            p.entropy = report.ppo.entropy;
            reward_sum = 0;
            reward_count = 0;
            curve.push_back(p);
            csv += curve_csv_row(p) + "\n";
            if (hooks.after_eval) hooks.after_eval(p);
            flush_csv();
        }
        if (out_dir && config.checkpoint_every > 0 && u % config.checkpoint_every == 0) {
            char name[40];
            std::snprintf(name, sizeof name, "update_%06zu.stgc", u);
            std::filesystem::create_directories(*out_dir / "checkpoints");
            last_good = *out_dir / "checkpoints" / name;
            save_policy(*last_good);
        }
    }

    const std::string hash_after = models::bundle_hash(bundle);
    if (hash_after != hash_before) throw std::logic_error("bundle parameters changed during online training");
    if (out_dir) {
        save_policy(*out_dir / "policy.stgc");
        flush_csv();
    }
    return {std::move(policy), std::move(curve), hash_before};
}

}  // namespace stg::rl
