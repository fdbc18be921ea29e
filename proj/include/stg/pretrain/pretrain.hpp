// SPDX-License-Identifier: Apache-2.0
#pragma once

// Offline pretraining of encoder, transformer, critic and temporal distance
// regressor from observation-only expert datasets.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "stg/env/dataset.hpp"
#include "stg/models/bundle.hpp"
#include "stg/numerics/optimizer.hpp"

namespace stg::pretrain {

using models::ModelBundle;
using num::Tape;
using num::Tensor;
using num::Var;

struct PretrainConfig {
    double alpha = 0.5;  // prediction (mse) weight
    double beta = 0.3;   // adversarial weight
    double kappa = 0.1;  // temporal distance weight
    std::size_t batch_size = 16;
    std::size_t seq_len = 8;
    std::size_t tdr_pairs = 64;
    double generator_lr = 1e-4;
    double critic_lr = 1e-4;
    double weight_decay = 0.01;
    double clip_low = -0.01;
    double clip_high = 0.01;
    std::size_t epochs = 200;
    std::size_t critic_steps = 1;
    std::size_t checkpoint_every = 50;
    std::uint64_t seed = 0;
    std::vector<std::string> datasets;
    models::ModelConfig model;

    void validate() const;
    bool multi_task() const { return datasets.size() > 1; }
};

// Rejects unknown keys. Missing keys keep their defaults.
PretrainConfig parse_pretrain_config(const std::string& json_text);
std::string to_json_text(const PretrainConfig& config);

// Sampled states for one epoch's buffer.
struct PretrainBatch {
    std::vector<env::ObservationState> window_states;  // windows * seq, window-major
    std::size_t windows = 0;
    std::size_t seq = 0;
    std::vector<env::ObservationState> pair_from;
    std::vector<env::ObservationState> pair_to;
    std::vector<double> targets;  // symlog distance from pair_from to pair_to
};

template <typename T>
struct BatchTensors {
    Tensor<T> windows;  // (windows * seq, k, H, W)
    std::size_t seq = 0;
    Tensor<T> pair_from;
    Tensor<T> pair_to;
    Tensor<T> targets;  // (P, 1)

    static BatchTensors from(const PretrainBatch& batch);
    std::size_t window_count() const { return windows.shape.at(0) / seq; }
    bool has_pairs() const { return !targets.data.empty(); }
};

// Adjacent-pair rows of every window: e_t, e_{t+1} and the prediction of e_{t+1}.
template <typename T>
struct TransitionEmbeddings {
    Tensor<T> from;
    Tensor<T> next;
    Tensor<T> predicted;
};

// Evaluated without recording gradients.
template <typename T>
TransitionEmbeddings<T> embed_transitions(const ModelBundle<T>& bundle, const BatchTensors<T>& batch);

// Critic loss: mean D(e, e_pred) - mean D(e, e_next) over adjacent pairs of
// every window. Embeddings and predictions are detached.
template <typename T>
Var<T> loss_dis(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch);
template <typename T>
Var<T> loss_dis(Tape<T>& tape, const models::Critic<T>& critic, const TransitionEmbeddings<T>& emb);

template <typename T>
struct GeneratorLosses {
    Var<T> adv;  // -mean D(e, e_pred)
    Var<T> mse;  // mean squared error between e_pred and e_next
};

// The critic enters as a constant.
template <typename T>
GeneratorLosses<T> loss_gen(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch);

// Mean squared error of the regressor against the symlog targets.
template <typename T>
Var<T> loss_tdr(Tape<T>& tape, const ModelBundle<T>& bundle, const BatchTensors<T>& batch);

template <typename T>
struct GeneratorObjective {
    Var<T> total;
    Var<T> adv;
    Var<T> mse;
    std::optional<Var<T>> tdr;
};

// alpha * mse + beta * adv + kappa * tdr. The regressor term is skipped when kappa is 0.
template <typename T>
GeneratorObjective<T> generator_objective(Tape<T>& tape, const ModelBundle<T>& bundle,
                                          const BatchTensors<T>& batch, double alpha, double beta,
                                          double kappa);

// Clamps every critic parameter into [lo, hi]; other networks are untouched.
template <typename T>
void clip_critic_weights(ModelBundle<T>& bundle, T lo, T hi);

struct LossReport {
    std::size_t step = 0;
    double dis = 0;
    double adv = 0;
    double mse = 0;
    double tdr = 0;
    double total = 0;
    double gap = 0;  // mean expert score minus mean predicted score
};

std::string loss_csv_header();
std::string loss_csv_row(const LossReport& report);

class PretrainAborted : public std::runtime_error {
   public:
    PretrainAborted(const std::string& what, std::size_t epoch, std::optional<std::filesystem::path> last_good)
        : std::runtime_error(what), epoch_(epoch), last_good_(std::move(last_good)) {}
    std::size_t epoch() const { return epoch_; }
    const std::optional<std::filesystem::path>& last_good_checkpoint() const { return last_good_; }

   private:
    std::size_t epoch_;
    std::optional<std::filesystem::path> last_good_;
};

class Pretrainer {
   public:
    Pretrainer(PretrainConfig config, std::vector<env::ExpertDataset> datasets);

    PretrainBatch sample_batch();
    // One critic update (RMSprop, then clip). Returns the pre-update loss.
    double critic_step(const PretrainBatch& batch);
    // The same update on precomputed embeddings; encoder and transformer do
    // not change between critic updates of one epoch.
    double critic_step(const TransitionEmbeddings<float>& emb);
    // One generator update (AdamW) of encoder, transformer and regressor.
    LossReport generator_step(const PretrainBatch& batch);
    // Buffer refill, critic_steps critic updates, one generator update.
    LossReport run_epoch(const std::function<void(const ModelBundle<float>&)>& after_critic = {});

    ModelBundle<float>& bundle() { return bundle_; }
    const ModelBundle<float>& bundle() const { return bundle_; }
    const PretrainConfig& config() const { return config_; }
    std::size_t epoch() const { return epoch_; }

   private:
    PretrainConfig config_;
    std::vector<env::ExpertDataset> datasets_;
    ModelBundle<float> bundle_;
    std::mt19937_64 rng_;
    num::Optimizer<float> critic_opt_;
    num::Optimizer<float> generator_opt_;
    std::size_t epoch_ = 0;
};

struct PretrainHooks {
    // After every critic update (including clipping).
    std::function<void(std::size_t epoch, const ModelBundle<float>&)> after_critic_update;
    std::function<void(const LossReport&)> after_epoch;
};

struct PretrainResult {
    ModelBundle<float> bundle;
    std::vector<LossReport> reports;
};

// Checks that all datasets share frame geometry.
void check_dataset_geometry(const std::vector<env::ExpertDataset>& datasets);

// Runs config.epochs epochs. With an output directory, writes losses.csv,
// checkpoints/epoch_<e>/ every checkpoint_every epochs, and bundle/ at the end.
// A non-finite value aborts with PretrainAborted naming the last checkpoint.
PretrainResult pretrain(const PretrainConfig& config, std::vector<env::ExpertDataset> datasets,
                        const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                        const PretrainHooks& hooks = {});

}  // namespace stg::pretrain
