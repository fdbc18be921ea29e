// SPDX-License-Identifier: Apache-2.0
#pragma once

// A model bundle is the four networks plus the configuration and the
// environment fingerprints they were trained against. On disk it is a
// directory holding bundle.stgc (parameters) and bundle.json (manifest).

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stg/env/grid_env.hpp"
#include "stg/models/networks.hpp"

namespace stg::models {

template <typename T>
struct ModelBundle {
    ModelConfig config;
    std::vector<std::string> env_fingerprints;
    Encoder<T> encoder;
    StgTransformer<T> transformer;
    Critic<T> critic;
    TemporalDistanceRegressor<T> tdr;

    ModelBundle(const ModelConfig& cfg, std::uint64_t seed);

    std::array<ParameterSet<T>*, 4> all_sets() {
        return {&encoder.params(), &transformer.params(), &critic.params(), &tdr.params()};
    }
    std::array<const ParameterSet<T>*, 4> all_sets() const {
        return {&encoder.params(), &transformer.params(), &critic.params(), &tdr.params()};
    }

    // Same architecture and values at another precision.
    template <typename U>
    ModelBundle<U> convert() const {
        ModelBundle<U> out(config, 0);
        out.env_fingerprints = env_fingerprints;
        out.encoder.params().copy_values_from(encoder.params());
        out.transformer.params().copy_values_from(transformer.params());
        out.critic.params().copy_values_from(critic.params());
        out.tdr.params().copy_values_from(tdr.params());
        return out;
    }
};

extern template struct ModelBundle<float>;
extern template struct ModelBundle<double>;

inline constexpr const char* kBundleWeightsFile = "bundle.stgc";
inline constexpr const char* kBundleManifestFile = "bundle.json";

void save_bundle(const ModelBundle<float>& bundle, const std::filesystem::path& dir);
ModelBundle<float> load_bundle(const std::filesystem::path& dir);
// SHA-256 over all four parameter sets.
std::string bundle_hash(const ModelBundle<float>& bundle);

// Builds a ModelConfig whose frame geometry matches the environment.
ModelConfig config_for(const env::EnvConfig& env, ModelConfig base = {});

// --- inference helpers (no gradients recorded) -------------------------------

// (B, k, H, W) with pixels scaled to [0, 1].
template <typename T>
Tensor<T> states_to_tensor(const std::vector<env::ObservationState>& states);

template <typename T>
Tensor<T> encode(const ModelBundle<T>& bundle, const std::vector<env::ObservationState>& states);

// embeddings (groups * seq, d) -> predictions (groups * seq, d)
template <typename T>
Tensor<T> predict_next(const ModelBundle<T>& bundle, const Tensor<T>& embeddings, std::size_t seq);

// (N, d), (N, d) -> N scores
template <typename T>
std::vector<T> critic_scores(const ModelBundle<T>& bundle, const Tensor<T>& from, const Tensor<T>& to);

template <typename T>
std::vector<T> tdr_scores(const ModelBundle<T>& bundle, const Tensor<T>& from, const Tensor<T>& to);

}  // namespace stg::models
