// SPDX-License-Identifier: Apache-2.0
#include "stg/pretrain/pretrain.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "stg/io/binary.hpp"

namespace stg::pretrain {

using json = nlohmann::json;

void PretrainConfig::validate() const {
    if (alpha < 0 || beta < 0 || kappa < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (!(clip_low < 0 && clip_high > 0 && clip_low == -clip_high))
        throw std::invalid_argument("clip bounds must be symmetric around zero");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    if (seq_len < 2) throw std::invalid_argument("seq_len must be >= 2");
    if (seq_len > model.block_size) throw std::invalid_argument("seq_len exceeds the transformer block size");
    if (critic_steps == 0) throw std::invalid_argument("critic_steps must be >= 1");
    if (!(generator_lr > 0) || !(critic_lr > 0)) throw std::invalid_argument("learning rates must be > 0");
    if (weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    model.validate();
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
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

}  // namespace

PretrainConfig parse_pretrain_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("pretrain config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("pretrain config must be a JSON object");
    reject_unknown(j,
                   {"alpha", "beta", "kappa", "batch_size", "seq_len", "tdr_pairs", "generator_lr", "critic_lr",
                    "weight_decay", "clip_low", "clip_high", "epochs", "critic_steps", "checkpoint_every", "seed",
                    "datasets", "model"},
                   "pretrain config");
    PretrainConfig c;
    try {
        read(j, "alpha", c.alpha);
        read(j, "beta", c.beta);
        read(j, "kappa", c.kappa);
        read(j, "batch_size", c.batch_size);
        read(j, "seq_len", c.seq_len);
        read(j, "tdr_pairs", c.tdr_pairs);
        read(j, "generator_lr", c.generator_lr);
        read(j, "critic_lr", c.critic_lr);
        read(j, "weight_decay", c.weight_decay);
        read(j, "clip_low", c.clip_low);
        read(j, "clip_high", c.clip_high);
        read(j, "epochs", c.epochs);
        read(j, "critic_steps", c.critic_steps);
        read(j, "checkpoint_every", c.checkpoint_every);
        read(j, "seed", c.seed);
        read(j, "datasets", c.datasets);
        if (j.contains("model")) {
            const json& m = j.at("model");
            reject_unknown(m,
                           {"embed_dim", "block_size", "layers", "heads", "mlp_ratio", "conv_channels",
                            "critic_widths", "tdr_heads", "tdr_hidden", "tdr_segment_init", "critic_spectral_norm"},
                           "pretrain config model section");
            read(m, "embed_dim", c.model.embed_dim);
            read(m, "block_size", c.model.block_size);
            read(m, "layers", c.model.layers);
            read(m, "heads", c.model.heads);
            read(m, "mlp_ratio", c.model.mlp_ratio);
            read(m, "conv_channels", c.model.conv_channels);
            read(m, "critic_widths", c.model.critic_widths);
            read(m, "tdr_heads", c.model.tdr_heads);
            read(m, "tdr_hidden", c.model.tdr_hidden);
            read(m, "tdr_segment_init", c.model.tdr_segment_init);
            read(m, "critic_spectral_norm", c.model.critic_spectral_norm);
        }
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("pretrain config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string to_json_text(const PretrainConfig& c) {
    json j{{"alpha", c.alpha},
           {"beta", c.beta},
           {"kappa", c.kappa},
           {"batch_size", c.batch_size},
           {"seq_len", c.seq_len},
           {"tdr_pairs", c.tdr_pairs},
           {"generator_lr", c.generator_lr},
           {"critic_lr", c.critic_lr},
           {"weight_decay", c.weight_decay},
           {"clip_low", c.clip_low},
           {"clip_high", c.clip_high},
           {"epochs", c.epochs},
           {"critic_steps", c.critic_steps},
           {"checkpoint_every", c.checkpoint_every},
           {"seed", c.seed},
           {"datasets", c.datasets},
           {"model",
            {{"embed_dim", c.model.embed_dim},
             {"block_size", c.model.block_size},
             {"layers", c.model.layers},
             {"heads", c.model.heads},
             {"mlp_ratio", c.model.mlp_ratio},
             {"conv_channels", c.model.conv_channels},
             {"critic_widths", c.model.critic_widths},
             {"tdr_heads", c.model.tdr_heads},
             {"tdr_hidden", c.model.tdr_hidden},
             {"tdr_segment_init", c.model.tdr_segment_init},
             {"critic_spectral_norm", c.model.critic_spectral_norm}}}};
    return j.dump(2) + "\n";
}

// --- batches -----------------------------------------------------------------

template <typename T>
BatchTensors<T> BatchTensors<T>::from(const PretrainBatch& batch) {
    if (batch.windows == 0 || batch.seq < 2 || batch.window_states.size() != batch.windows * batch.seq)
        throw std::invalid_argument("pretrain batch needs windows of at least 2 states");
    BatchTensors<T> out;
    out.windows = models::states_to_tensor<T>(batch.window_states);
    out.seq = batch.seq;
    if (!batch.targets.empty()) {
        if (batch.pair_from.size() != batch.targets.size() || batch.pair_to.size() != batch.targets.size())
            throw std::invalid_argument("pretrain batch: pair lists disagree in length");
        out.pair_from = models::states_to_tensor<T>(batch.pair_from);
        out.pair_to = models::states_to_tensor<T>(batch.pair_to);
        out.targets = Tensor<T>({batch.targets.size(), 1});
        for (std::size_t i = 0; i < batch.targets.size(); ++i) out.targets[i] = static_cast<T>(batch.targets[i]);
    }
    return out;
}

template struct BatchTensors<float>;
template struct BatchTensors<double>;

// --- losses ------------------------------------------------------------------

namespace {

struct TransitionIndex {
    std::vector<std::size_t> from;  // e_t rows
    std::vector<std::size_t> next;  // e_{t+1} rows; also the prediction rows are `from`
};

TransitionIndex transitions(std::size_t windows, std::size_t seq) {
    TransitionIndex idx;
    for (std::size_t g = 0; g < windows; ++g)
        for (std::size_t i = 0; i + 1 < seq; ++i) {
            idx.from.push_back(g * seq + i);
            idx.next.push_back(g * seq + i + 1);
        }
    return idx;
}

template <typename T>
struct Rollout {
    Var<T> from;
    Var<T> next;
    Var<T> predicted;
};

template <typename T>
Rollout<T> embed_windows(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch) {
    if (batch.seq < 2) throw std::invalid_argument("pretrain losses need windows of at least 2 states");
    Var<T> e = bundle.encoder.forward(tape, tape.constant(batch.windows));
    Var<T> pred = bundle.transformer.forward(tape, e, batch.seq);
    const auto idx = transitions(batch.window_count(), batch.seq);
    return {num::gather_rows(e, idx.from), num::gather_rows(e, idx.next), num::gather_rows(pred, idx.from)};
}

}  // namespace

template <typename T>
TransitionEmbeddings<T> embed_transitions(const ModelBundle<T>& bundle, const BatchTensors<T>& batch) {
    Tape<T> tape(num::TapeMode::Inference);
    Rollout<T> r = embed_windows(tape, bundle, batch);
    return {r.from.value(), r.next.value(), r.predicted.value()};
}

template <typename T>
Var<T> loss_dis(Tape<T>& tape, const models::Critic<T>& critic, const TransitionEmbeddings<T>& emb) {
    Var<T> from = tape.constant(emb.from);
    Var<T> expert = critic.forward(tape, from, tape.constant(emb.next));
    Var<T> predicted = critic.forward(tape, from, tape.constant(emb.predicted));
    return num::sub(num::mean(predicted), num::mean(expert));
}

template <typename T>
Var<T> loss_dis(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch) {
    Rollout<T> r = embed_windows(tape, bundle, batch);
    Var<T> from = num::detach(r.from);
    Var<T> expert = bundle.critic.forward(tape, from, num::detach(r.next));
    Var<T> predicted = bundle.critic.forward(tape, from, num::detach(r.predicted));
    return num::sub(num::mean(predicted), num::mean(expert));
}

template <typename T>
GeneratorLosses<T> loss_gen(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch) {
    tape.freeze(bundle.critic.params());
    Rollout<T> r = embed_windows(tape, bundle, batch);
    Var<T> adv = num::scale(num::mean(bundle.critic.forward(tape, r.from, r.predicted)), T(-1));
    Var<T> mse = num::mse(r.predicted, r.next);
    return {adv, mse};
}

template <typename T>
Var<T> loss_tdr(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch) {
    if (!batch.has_pairs()) throw std::invalid_argument("loss_tdr: batch has no pairs");
    Var<T> ei = bundle.encoder.forward(tape, tape.constant(batch.pair_from));
    Var<T> ej = bundle.encoder.forward(tape, tape.constant(batch.pair_to));
    return num::mse(bundle.tdr.forward(tape, ei, ej), tape.constant(batch.targets));
}

template <typename T>
GeneratorObjective<T> generator_objective(Tape<T>& tape, const ModelBundle<T>& bundle,
                                          const BatchTensors<T>& batch, double alpha, double beta,
                                          double kappa) {
    GeneratorLosses<T> g = loss_gen(tape, bundle, batch);
    Var<T> total = num::add(num::scale(g.mse, static_cast<T>(alpha)), num::scale(g.adv, static_cast<T>(beta)));
    GeneratorObjective<T> out{total, g.adv, g.mse, std::nullopt};
    if (kappa != 0.0) {
        out.tdr = loss_tdr(tape, bundle, batch);
        out.total = num::add(total, num::scale(*out.tdr, static_cast<T>(kappa)));
    }
    return out;
}

template <typename T>
void clip_critic_weights(ModelBundle<T>& bundle, T lo, T hi) {
    bundle.critic.clip_weights(lo, hi);
}

#define STG_INSTANTIATE(T)                                                                              \
    template Var<T> loss_dis<T>(Tape<T>&, const ModelBundle<T>&, const BatchTensors<T>&);              \
    template Var<T> loss_dis<T>(Tape<T>&, const models::Critic<T>&, const TransitionEmbeddings<T>&);   \
    template TransitionEmbeddings<T> embed_transitions<T>(const ModelBundle<T>&, const BatchTensors<T>&); \
    template GeneratorLosses<T> loss_gen<T>(Tape<T>&, const ModelBundle<T>&, const BatchTensors<T>&);  \
    template Var<T> loss_tdr<T>(Tape<T>&, const ModelBundle<T>&, const BatchTensors<T>&);              \
    template GeneratorObjective<T> generator_objective<T>(Tape<T>&, const ModelBundle<T>&,             \
                                                          const BatchTensors<T>&, double, double, double); \
    template void clip_critic_weights<T>(ModelBundle<T>&, T, T);
STG_INSTANTIATE(float)
STG_INSTANTIATE(double)
#undef STG_INSTANTIATE

// --- reports -----------------------------------------------------------------

std::string loss_csv_header() { return "step,L_dis,L_adv,L_mse,L_tdr,gap"; }

std::string loss_csv_row(const LossReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.dis, r.adv, r.mse, r.tdr, r.gap);
    return buf;
}

// --- trainer -----------------------------------------------------------------

void check_dataset_geometry(const std::vector<env::ExpertDataset>& datasets) {
    if (datasets.empty()) throw std::invalid_argument("pretraining needs at least one dataset");
    for (const auto& ds : datasets) {
        if (ds.trajectories.empty()) throw std::invalid_argument("dataset " + ds.fingerprint + " is empty");
        if (!(ds.geometry == datasets.front().geometry))
            throw io::FormatError(io::FormatError::Kind::Geometry,
                                  "dataset geometry mismatch: " + ds.fingerprint + " has " +
                                      std::to_string(ds.geometry.height) + "x" + std::to_string(ds.geometry.width) +
                                      "x" + std::to_string(ds.geometry.stack) + ", " + datasets.front().fingerprint +
                                      " has " + std::to_string(datasets.front().geometry.height) + "x" +
                                      std::to_string(datasets.front().geometry.width) + "x" +
                                      std::to_string(datasets.front().geometry.stack));
    }
}

namespace {

models::ModelConfig resolved_model(const PretrainConfig& config, const std::vector<env::ExpertDataset>& datasets) {
    check_dataset_geometry(datasets);
    models::ModelConfig m = config.model;
    m.frame = datasets.front().geometry;
    return m;
}

}  // namespace

Pretrainer::Pretrainer(PretrainConfig config, std::vector<env::ExpertDataset> datasets)
    : config_(std::move(config)),
      datasets_(std::move(datasets)),
      bundle_(resolved_model(config_, datasets_), config_.seed),
      rng_(config_.seed ^ 0x9E3779B97F4A7C15ULL),
      critic_opt_(num::OptimizerConfig::rmsprop(config_.critic_lr)),
      generator_opt_(num::OptimizerConfig::adamw(config_.generator_lr, config_.weight_decay)) {
    config_.model = bundle_.config;
    config_.validate();
    for (const auto& ds : datasets_) bundle_.env_fingerprints.push_back(ds.fingerprint);
}

PretrainBatch Pretrainer::sample_batch() {
    PretrainBatch b;
    b.windows = config_.batch_size;
    b.seq = config_.seq_len;
    std::uniform_int_distribution<std::size_t> pick_ds(0, datasets_.size() - 1);
    for (std::size_t w = 0; w < config_.batch_size; ++w) {
        const auto& ds = datasets_[datasets_.size() == 1 ? 0 : pick_ds(rng_)];
        const auto win = env::sample_window(ds, config_.seq_len, rng_);
        for (std::size_t i = 0; i < win.length; ++i) b.window_states.push_back(ds.state(win.traj, win.start + i));
    }
    // Pairs are drawn even when kappa is 0 so the window stream does not depend on it.
    for (std::size_t p = 0; p < config_.tdr_pairs; ++p) {
        const auto& ds = datasets_[datasets_.size() == 1 ? 0 : pick_ds(rng_)];
        const auto pair = env::sample_pair(ds, rng_);
        b.pair_from.push_back(ds.state(pair.traj, pair.i));
        b.pair_to.push_back(ds.state(pair.traj, pair.j));
        b.targets.push_back(pair.target);
    }
    return b;
}

double Pretrainer::critic_step(const PretrainBatch& batch) {
    return critic_step(embed_transitions(bundle_, BatchTensors<float>::from(batch)));
}

double Pretrainer::critic_step(const TransitionEmbeddings<float>& emb) {
    Tape<float> tape;
    Var<float> loss = loss_dis(tape, bundle_.critic, emb);
    const double value = loss.item();
    bundle_.critic.params().mark_grads_ready();
    tape.backward(loss);
    critic_opt_.step(bundle_.critic.params());
    clip_critic_weights(bundle_, static_cast<float>(config_.clip_low), static_cast<float>(config_.clip_high));
    if (bundle_.config.critic_spectral_norm) bundle_.critic.spectral_normalize();
    return value;
}

LossReport Pretrainer::generator_step(const PretrainBatch& batch) {
    const auto tensors = BatchTensors<float>::from(batch);
    Tape<float> tape;
    auto obj = generator_objective(tape, bundle_, tensors, config_.alpha, config_.beta, config_.kappa);
    num::ParameterSet<float>* sets[] = {&bundle_.encoder.params(), &bundle_.transformer.params(), &bundle_.tdr.params()};
    for (auto* s : sets) s->mark_grads_ready();
    tape.backward(obj.total);
    generator_opt_.step(sets);
    LossReport r;
    r.adv = obj.adv.item();
    r.mse = obj.mse.item();
    r.tdr = obj.tdr ? obj.tdr->item() : 0.0;
    r.total = obj.total.item();
    return r;
}

LossReport Pretrainer::run_epoch(const std::function<void(const ModelBundle<float>&)>& after_critic) {
    const PretrainBatch batch = sample_batch();
    const auto emb = embed_transitions(bundle_, BatchTensors<float>::from(batch));
    double dis = 0;
    for (std::size_t k = 0; k < config_.critic_steps; ++k) {
        dis = critic_step(emb);
        if (after_critic) after_critic(bundle_);
    }
    LossReport r = generator_step(batch);
    r.dis = dis;
    r.gap = -dis;
    r.step = ++epoch_;
    return r;
}

PretrainResult pretrain(const PretrainConfig& config, std::vector<env::ExpertDataset> datasets,
                        const std::optional<std::filesystem::path>& out_dir, const PretrainHooks& hooks) {
    config.validate();
    Pretrainer trainer(config, std::move(datasets));
    std::vector<LossReport> reports;
    std::optional<std::filesystem::path> last_good;
    std::string csv = loss_csv_header() + "\n";

    auto flush_csv = [&] {
        if (out_dir) io::write_text_atomic(*out_dir / "losses.csv", csv);
    };
    if (out_dir) std::filesystem::create_directories(*out_dir);

    for (std::size_t e = 0; e < config.epochs; ++e) {
        LossReport r;
        try {
            r = trainer.run_epoch([&](const ModelBundle<float>& b) {
                if (hooks.after_critic_update) hooks.after_critic_update(e + 1, b);
            });
            if (!std::isfinite(r.dis) || !std::isfinite(r.total) || !std::isfinite(r.tdr))
                throw num::NumericalError("non-finite loss");
        } catch (const num::NumericalError& err) {
            flush_csv();
            throw PretrainAborted("pretraining aborted at epoch " + std::to_string(e + 1) + ": " + err.what() +
                                      (last_good ? "; last good checkpoint: " + last_good->string()
                                                 : "; no checkpoint written yet"),
                                  e + 1, last_good);
        }
        reports.push_back(r);
        csv += loss_csv_row(r) + "\n";
        if (hooks.after_epoch) hooks.after_epoch(r);
        if (out_dir && config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof name, "epoch_%06zu", e + 1);
            const auto path = *out_dir / "checkpoints" / name;
            models::save_bundle(trainer.bundle(), path);
            last_good = path;
            flush_csv();
        }
    }
    if (out_dir) {
        models::save_bundle(trainer.bundle(), *out_dir / "bundle");
        flush_csv();
    }
    return {std::move(trainer.bundle()), std::move(reports)};
}

}  // namespace stg::pretrain
