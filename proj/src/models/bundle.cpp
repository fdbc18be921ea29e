// SPDX-License-Identifier: Apache-2.0
#include "stg/models/bundle.hpp"

#include <random>

#include "json.hpp"
#include "stg/io/binary.hpp"
#include "stg/numerics/checkpoint.hpp"

namespace stg::models {

using json = nlohmann::json;
using io::FormatError;

namespace {

// Each network draws from its own stream so changing one architecture leaves
// the others' initialization untouched.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
}

template <typename Net>
Net make(const ModelConfig& cfg, std::uint64_t seed, std::uint64_t index) {
    auto rng = stream(seed, index);
    return Net(cfg, rng);
}

json config_to_json(const ModelConfig& c) {
    return {{"frame", {{"height", c.frame.height}, {"width", c.frame.width}, {"stack", c.frame.stack}}},
            {"conv_channels", c.conv_channels},
            {"conv_kernel", c.conv_kernel},
            {"conv_stride", c.conv_stride},
            {"conv_padding", c.conv_padding},
            {"embed_dim", c.embed_dim},
            {"block_size", c.block_size},
            {"layers", c.layers},
            {"heads", c.heads},
            {"mlp_ratio", c.mlp_ratio},
            {"critic_widths", c.critic_widths},
            {"tdr_heads", c.tdr_heads},
            {"tdr_hidden", c.tdr_hidden},
            {"tdr_segment_init", c.tdr_segment_init},
            {"critic_spectral_norm", c.critic_spectral_norm}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.frame = {j.at("frame").at("height").get<int>(), j.at("frame").at("width").get<int>(),
               j.at("frame").at("stack").get<int>()};
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.conv_kernel = j.at("conv_kernel").get<std::size_t>();
    c.conv_stride = j.at("conv_stride").get<std::size_t>();
    c.conv_padding = j.at("conv_padding").get<std::size_t>();
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.block_size = j.at("block_size").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    c.critic_widths = j.at("critic_widths").get<std::vector<std::size_t>>();
    c.tdr_heads = j.at("tdr_heads").get<std::size_t>();
    c.tdr_hidden = j.at("tdr_hidden").get<std::size_t>();
    c.tdr_segment_init = j.value("tdr_segment_init", c.tdr_segment_init);
    c.critic_spectral_norm = j.at("critic_spectral_norm").get<bool>();
    return c;
}

}  // namespace

template <typename T>
ModelBundle<T>::ModelBundle(const ModelConfig& cfg, std::uint64_t seed)
    : config(cfg),
      encoder(make<Encoder<T>>(cfg, seed, 1)),
      transformer(make<StgTransformer<T>>(cfg, seed, 2)),
      critic(make<Critic<T>>(cfg, seed, 3)),
      tdr(make<TemporalDistanceRegressor<T>>(cfg, seed, 4)) {}

template struct ModelBundle<float>;
template struct ModelBundle<double>;

ModelConfig config_for(const env::EnvConfig& env, ModelConfig base) {
    base.frame = {env.frame_height(), env.frame_width(), env.frame_stack};
    base.validate();
    return base;
}

void save_bundle(const ModelBundle<float>& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto sets = bundle.all_sets();
    num::save_checkpoint(dir / kBundleWeightsFile, sets);
    json manifest;
    manifest["format_version"] = num::kCheckpointVersion;
    manifest["model"] = config_to_json(bundle.config);
    manifest["env_fingerprints"] = bundle.env_fingerprints;
    manifest["parameter_sha256"] = num::parameter_hash(sets);
    io::write_text_atomic(dir / kBundleManifestFile, manifest.dump(2) + "\n");
}

ModelBundle<float> load_bundle(const std::filesystem::path& dir) {
    const auto path = dir / kBundleManifestFile;
    const auto bytes = io::read_file(path);
    json manifest;
    ModelConfig cfg;
    std::vector<std::string> fingerprints;
    try {
        manifest = json::parse(bytes.begin(), bytes.end());
        if (manifest.at("format_version").get<std::uint32_t>() != num::kCheckpointVersion)
            throw FormatError(FormatError::Kind::BadVersion, path.string() + ": unsupported bundle version");
        cfg = config_from_json(manifest.at("model"));
        fingerprints = manifest.at("env_fingerprints").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, path.string() + ": " + e.what());
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::Schema, path.string() + ": " + e.what());
    }
    ModelBundle<float> bundle(cfg, 0);
    bundle.env_fingerprints = std::move(fingerprints);
    const auto sets = bundle.all_sets();
    num::load_checkpoint_into(dir / kBundleWeightsFile, sets);
    return bundle;
}

std::string bundle_hash(const ModelBundle<float>& bundle) {
    const auto sets = bundle.all_sets();
    return num::parameter_hash(sets);
}

// --- inference ---------------------------------------------------------------

template <typename T>
Tensor<T> states_to_tensor(const std::vector<env::ObservationState>& states) {
    if (states.empty()) throw std::invalid_argument("states_to_tensor: empty batch");
    const auto g = states.front().geometry;
    Tensor<T> out({states.size(), static_cast<std::size_t>(g.stack), static_cast<std::size_t>(g.height),
                   static_cast<std::size_t>(g.width)});
    const std::size_t per = g.state_bytes();
    for (std::size_t b = 0; b < states.size(); ++b) {
        if (states[b].geometry != g || states[b].pixels.size() != per)
            throw num::ShapeError("states_to_tensor: mixed state geometries in one batch");
        for (std::size_t i = 0; i < per; ++i) out[b * per + i] = static_cast<T>(states[b].pixels[i]) / T(255);
    }
    return out;
}

template <typename T>
Tensor<T> encode(const ModelBundle<T>& bundle, const std::vector<env::ObservationState>& states) {
    Tape<T> tape(num::TapeMode::Inference);
    return bundle.encoder.forward(tape, tape.constant(states_to_tensor<T>(states))).value();
}

template <typename T>
Tensor<T> predict_next(const ModelBundle<T>& bundle, const Tensor<T>& embeddings, std::size_t seq) {
    Tape<T> tape(num::TapeMode::Inference);
    return bundle.transformer.forward(tape, tape.constant(embeddings), seq).value();
}

template <typename T>
std::vector<T> critic_scores(const ModelBundle<T>& bundle, const Tensor<T>& from, const Tensor<T>& to) {
    Tape<T> tape(num::TapeMode::Inference);
    return bundle.critic.forward(tape, tape.constant(from), tape.constant(to)).value().data;
}

template <typename T>
std::vector<T> tdr_scores(const ModelBundle<T>& bundle, const Tensor<T>& from, const Tensor<T>& to) {
    Tape<T> tape(num::TapeMode::Inference);
    return bundle.tdr.forward(tape, tape.constant(from), tape.constant(to)).value().data;
}

#define STG_INSTANTIATE(T)                                                                              \
    template Tensor<T> states_to_tensor<T>(const std::vector<env::ObservationState>&);                 \
    template Tensor<T> encode<T>(const ModelBundle<T>&, const std::vector<env::ObservationState>&);    \
    template Tensor<T> predict_next<T>(const ModelBundle<T>&, const Tensor<T>&, std::size_t);          \
    template std::vector<T> critic_scores<T>(const ModelBundle<T>&, const Tensor<T>&, const Tensor<T>&); \
    template std::vector<T> tdr_scores<T>(const ModelBundle<T>&, const Tensor<T>&, const Tensor<T>&);
STG_INSTANTIATE(float)
STG_INSTANTIATE(double)
#undef STG_INSTANTIATE

}  // namespace stg::models
