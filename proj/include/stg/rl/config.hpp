// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON forms of the environment and RL configurations. Unknown keys are
// rejected; missing keys keep their defaults.

#include <string>

#include "stg/env/grid_env.hpp"
#include "stg/rl/train.hpp"

namespace stg::rl {

std::string to_json_text(const env::EnvConfig& config);
env::EnvConfig parse_env_config(const std::string& json_text);

std::string to_json_text(const RlConfig& config);
RlConfig parse_rl_config(const std::string& json_text);

}  // namespace stg::rl
