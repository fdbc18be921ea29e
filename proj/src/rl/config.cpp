// SPDX-License-Identifier: Apache-2.0
#include "stg/rl/config.hpp"

#include <initializer_list>
#include <stdexcept>

#include "json.hpp"

namespace stg::rl {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok |= key == k;
        if (!ok) throw std::invalid_argument("unknown key \"" + key + "\" in " + where);
    }
}

template <typename V>
void read(const json& j, const char* key, V& out) {
    if (j.contains(key)) out = j.at(key).get<V>();
}

json parse_object(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(what + " is not valid JSON: " + e.what());
    }
}

json env_json(const env::EnvConfig& c) {
    return {{"task", env::to_string(c.task)}, {"grid", c.grid},           {"scale", c.scale},
            {"horizon", c.horizon},           {"frame_stack", c.frame_stack}, {"seed", c.seed}};
}

env::EnvConfig env_from(const json& j) {
    reject_unknown(j, {"task", "grid", "scale", "horizon", "frame_stack", "seed"}, "env config");
    env::EnvConfig c;
    if (j.contains("task")) c.task = env::task_from_string(j.at("task").get<std::string>());
    read(j, "grid", c.grid);
    read(j, "scale", c.scale);
    read(j, "horizon", c.horizon);
    read(j, "frame_stack", c.frame_stack);
    read(j, "seed", c.seed);
    return c;
}

}  // namespace

std::string to_json_text(const env::EnvConfig& config) { return env_json(config).dump(2) + "\n"; }

env::EnvConfig parse_env_config(const std::string& json_text) {
    try {
        auto c = env_from(parse_object(json_text, "env config"));
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("env config: ") + e.what());
    }
}

std::string to_json_text(const RlConfig& c) {
    json j{{"env", env_json(c.env)},
           {"reward", {{"mode", to_string(c.reward.kind)}, {"eta", c.reward.eta}, {"nu", c.reward.nu}}},
           {"ppo",
            {{"gamma", c.ppo.gamma},
             {"lambda", c.ppo.lambda},
             {"clip_ratio", c.ppo.clip_ratio},
             {"entropy_coef", c.ppo.entropy_coef},
             {"value_coef", c.ppo.value_coef},
             {"learning_rate", c.ppo.learning_rate},
             {"max_grad_norm", c.ppo.max_grad_norm},
             {"horizon", c.ppo.horizon},
             {"epochs", c.ppo.epochs},
             {"minibatch", c.ppo.minibatch}}},
           {"policy", {{"conv_channels", c.policy.conv_channels}, {"hidden", c.policy.hidden}}},
           {"total_steps", c.total_steps},
           {"reward_context", c.reward_context},
           {"eval_every", c.eval_every},
           {"eval_episodes", c.eval_episodes},
           {"checkpoint_every", c.checkpoint_every},
           {"seed", c.seed}};
    return j.dump(2) + "\n";
}

RlConfig parse_rl_config(const std::string& json_text) {
    const json j = parse_object(json_text, "rl config");
    RlConfig c;
    try {
        reject_unknown(j,
                       {"env", "reward", "ppo", "policy", "total_steps", "reward_context", "eval_every",
                        "eval_episodes", "checkpoint_every", "seed"},
                       "rl config");
        if (j.contains("env")) c.env = env_from(j.at("env"));
        if (j.contains("reward")) {
            const json& r = j.at("reward");
            reject_unknown(r, {"mode", "eta", "nu"}, "rl config reward section");
            if (r.contains("mode")) c.reward.kind = reward_kind_from_string(r.at("mode").get<std::string>());
            read(r, "eta", c.reward.eta);
            read(r, "nu", c.reward.nu);
        }
        if (j.contains("ppo")) {
            const json& p = j.at("ppo");
            reject_unknown(p,
                           {"gamma", "lambda", "clip_ratio", "entropy_coef", "value_coef", "learning_rate",
                            "max_grad_norm", "horizon", "epochs", "minibatch"},
                           "rl config ppo section");
            read(p, "gamma", c.ppo.gamma);
            read(p, "lambda", c.ppo.lambda);
            read(p, "clip_ratio", c.ppo.clip_ratio);
            read(p, "entropy_coef", c.ppo.entropy_coef);
            read(p, "value_coef", c.ppo.value_coef);
            read(p, "learning_rate", c.ppo.learning_rate);
            read(p, "max_grad_norm", c.ppo.max_grad_norm);
            read(p, "horizon", c.ppo.horizon);
            read(p, "epochs", c.ppo.epochs);
            read(p, "minibatch", c.ppo.minibatch);
        }
        if (j.contains("policy")) {
            const json& p = j.at("policy");
            reject_unknown(p, {"conv_channels", "hidden"}, "rl config policy section");
            read(p, "conv_channels", c.policy.conv_channels);
            read(p, "hidden", c.policy.hidden);
        }
        read(j, "total_steps", c.total_steps);
        read(j, "reward_context", c.reward_context);
        read(j, "eval_every", c.eval_every);
        read(j, "eval_episodes", c.eval_episodes);
        read(j, "checkpoint_every", c.checkpoint_every);
        read(j, "seed", c.seed);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("rl config: ") + e.what());
    }
    c.policy.frame = {c.env.frame_height(), c.env.frame_width(), c.env.frame_stack};
    c.validate();
    return c;
}

}  // namespace stg::rl
