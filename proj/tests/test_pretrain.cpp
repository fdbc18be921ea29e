// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "stg/io/binary.hpp"
#include "stg/numerics/gradcheck.hpp"
#include "stg/pretrain/pretrain.hpp"

using namespace stg;
using namespace stg::pretrain;

namespace {

env::EnvConfig tiny_env(std::uint64_t seed = 1, int grid = 4) {
    env::EnvConfig e;
    e.grid = grid;
    e.scale = 2;
    e.horizon = 16;
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

PretrainConfig tiny_config(std::uint64_t seed = 1) {
    PretrainConfig c;
    c.batch_size = 3;
    c.seq_len = 3;
    c.tdr_pairs = 6;
    c.epochs = 4;
    c.checkpoint_every = 2;
    c.seed = seed;
    c.model = tiny_model();
    return c;
}

std::vector<env::ExpertDataset> tiny_data(std::uint64_t seed = 1) {
    return {env::generate_expert_dataset(tiny_env(seed), 4)};
}

template <typename T>
num::Parameter<T>& param(num::ParameterSet<T>& set, const std::string& suffix) {
    for (auto& p : set)
        if (p->name.size() >= suffix.size() && p->name.compare(p->name.size() - suffix.size(), suffix.size(), suffix) == 0)
            return *p;
    throw std::out_of_range("no parameter ending in " + suffix);
}

template <typename T>
std::vector<T> snapshot(const num::ParameterSet<T>& set) {
    std::vector<T> out;
    for (const auto& p : set) out.insert(out.end(), p->value.data.begin(), p->value.data.end());
    return out;
}

// Critic reduced to the constant c.
template <typename T>
void make_constant_critic(models::ModelBundle<T>& b, T c) {
    for (auto& p : b.critic.params()) p->value.fill(T(0));
    param(b.critic.params(), "out.bias").value.fill(c);
}

// Critic reading the first coordinate of its second input (kept positive by the caller).
template <typename T>
void make_probe_critic(models::ModelBundle<T>& b) {
    for (auto& p : b.critic.params()) p->value.fill(T(0));
    const std::size_t d = b.config.embed_dim;
    auto& w1 = param(b.critic.params(), "fc1.weight").value;  // (2d, 6)
    w1[d * w1.shape[1]] = T(1);
    auto& w2 = param(b.critic.params(), "fc2.weight").value;  // (6, 4)
    w2[0] = T(1);
    auto& wo = param(b.critic.params(), "out.weight").value;  // (4, 1)
    wo[0] = T(1);
}

// One window of `seq` copies of the same state plus a matching pair.
template <typename T>
BatchTensors<T> repeated_state_batch(const env::ExpertDataset& ds, std::size_t seq) {
    PretrainBatch b;
    b.windows = 1;
    b.seq = seq;
    for (std::size_t i = 0; i < seq; ++i) b.window_states.push_back(ds.state(0, 0));
    b.pair_from = {ds.state(0, 0)};
    b.pair_to = {ds.state(0, 0)};
    b.targets = {0.0};
    return BatchTensors<T>::from(b);
}

}  // namespace

TEST_CASE("critic loss with a constant critic is zero and the adversarial loss is -c") {
    auto ds = tiny_data();
    Pretrainer p(tiny_config(), ds);
    const auto batch = BatchTensors<double>::from(p.sample_batch());
    auto b = p.bundle().convert<double>();
    make_constant_critic(b, 0.37);
    Tape<double> t;
    CHECK(loss_dis(t, b, batch).item() == doctest::Approx(0.0));
    CHECK(loss_gen(t, b, batch).adv.item() == doctest::Approx(-0.37));
}

TEST_CASE("critic loss on hand-set scores") {
    models::ModelBundle<double> b(tiny_model(), 1);
    make_probe_critic(b);
    const std::size_t d = b.config.embed_dim;
    TransitionEmbeddings<double> emb{Tensor<double>({2, d}, 0.5), Tensor<double>({2, d}, 3.0),
                                     Tensor<double>({2, d}, 1.0)};
    Tape<double> t;
    CHECK(loss_dis(t, b.critic, emb).item() == doctest::Approx(-2.0));
}

TEST_CASE("critic loss on precomputed embeddings equals the batch form") {
    auto ds = tiny_data();
    Pretrainer p(tiny_config(), ds);
    const auto batch = BatchTensors<float>::from(p.sample_batch());
    Tape<float> t;
    const double a = loss_dis(t, p.bundle(), batch).item();
    const double b = loss_dis(t, p.bundle().critic, embed_transitions(p.bundle(), batch)).item();
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
    CHECK_THROWS_AS(
        [&] {
            auto short_batch = batch;
            short_batch.seq = 1;
            loss_dis(t, p.bundle(), short_batch);
        }(),
        std::invalid_argument);
}

TEST_CASE("critic updates widen the expert-minus-predicted gap on a fixed batch") {
    auto ds = tiny_data(3);
    auto cfg = tiny_config(3);
    cfg.critic_lr = 1e-3;
    cfg.batch_size = 6;
    Pretrainer p(cfg, ds);
    const auto batch = p.sample_batch();
    std::vector<double> gaps;
    for (int i = 0; i < 50; ++i) gaps.push_back(-p.critic_step(batch));
    // Moving averages over 10 steps rise from the first to the last block.
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) first += gaps[i], last += gaps[40 + i];
    CHECK(last > first);
    CHECK(gaps.back() > gaps.front());
}

TEST_CASE("a perfect predictor has zero prediction error") {
    auto ds = tiny_data();
    models::ModelBundle<double> b(models::config_for(ds[0].config, tiny_model()), 2);
    b.transformer.decoder_weight().value.fill(0.0);
    b.transformer.decoder_bias().value.fill(0.0);
    const auto batch = repeated_state_batch<double>(ds[0], 3);
    Tape<double> t;
    CHECK(loss_gen(t, b, batch).mse.item() == 0.0);
}

TEST_CASE("temporal distance loss against symlog targets") {
    auto ds = tiny_data();
    models::ModelBundle<double> b(models::config_for(ds[0].config, tiny_model()), 3);
    PretrainBatch pb;
    pb.windows = 1;
    pb.seq = 2;
    pb.window_states = {ds[0].state(0, 0), ds[0].state(0, 1)};
    pb.pair_from = {ds[0].state(0, 2), ds[0].state(0, 2)};
    pb.pair_to = {ds[0].state(0, 2), ds[0].state(0, 3)};
    pb.targets = {models::symlog_distance(2, 2), models::symlog_distance(2, 3)};
    CHECK(pb.targets[1] == doctest::Approx(std::log(2.0)));
    const auto batch = BatchTensors<double>::from(pb);

    SUBCASE("zero predictor") {
        param(b.tdr.params(), "fc2.weight").value.fill(0.0);
        param(b.tdr.params(), "fc2.bias").value.fill(0.0);
        Tape<double> t;
        CHECK(loss_tdr(t, b, batch).item() == doctest::Approx(std::log(2.0) * std::log(2.0) / 2).epsilon(1e-12));
    }
    SUBCASE("self pairs measure the prediction at the zero anchor") {
        pb.pair_to = pb.pair_from;
        pb.targets = {0.0, 0.0};
        const auto self = BatchTensors<double>::from(pb);
        Tape<double> t(num::TapeMode::Inference);
        const auto e = b.encoder.forward(t, t.constant(self.pair_from));
        const auto out = b.tdr.forward(t, e, e).value();
        const double expected = (out[0] * out[0] + out[1] * out[1]) / 2;
        Tape<double> t2;
        CHECK(loss_tdr(t2, b, self).item() == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("pretraining losses match finite differences at 64-bit") {
    auto ds = tiny_data(5);
    auto cfg = tiny_config(5);
    cfg.batch_size = 1;
    cfg.seq_len = 2;
    cfg.tdr_pairs = 2;
    Pretrainer p(cfg, ds);
    const auto batch = BatchTensors<double>::from(p.sample_batch());
    auto b = p.bundle().convert<double>();

    SUBCASE("generator objective over encoder, transformer and regressor") {
        num::LossFn<double> fn = [&](Tape<double>& t) {
            return generator_objective(t, b, batch, cfg.alpha, cfg.beta, cfg.kappa).total;
        };
        num::ParameterSet<double>* sets[] = {&b.encoder.params(), &b.transformer.params(), &b.tdr.params()};
        auto report = num::gradient_check<double>(fn, sets, 1e-6);
        INFO(report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.max_rel_error < 1e-4);
    }
    SUBCASE("critic loss over the critic") {
        // The critic loss treats embeddings as constants, so only critic weights are checked.
        num::LossFn<double> fn = [&](Tape<double>& t) { return loss_dis(t, b, batch); };
        num::ParameterSet<double>* sets[] = {&b.critic.params()};
        auto report = num::gradient_check<double>(fn, sets, 1e-6);
        INFO(report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.max_rel_error < 1e-4);
    }
    SUBCASE("prediction and adversarial terms with respect to the transformer") {
        num::LossFn<double> fn = [&](Tape<double>& t) {
            auto g = loss_gen(t, b, batch);
            return num::add(num::scale(g.mse, cfg.alpha), num::scale(g.adv, cfg.beta));
        };
        num::ParameterSet<double>* sets[] = {&b.transformer.params()};
        auto report = num::gradient_check<double>(fn, sets, 1e-6);
        INFO(report.worst_param << "[" << report.worst_index << "]");
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("critic weight clipping") {
    models::ModelBundle<float> b(tiny_model(), 4);
    auto& w = param(b.critic.params(), "fc1.weight").value;
    w[0] = 0.5f;
    w[1] = -0.2f;
    w[2] = 0.005f;
    const auto encoder = snapshot(b.encoder.params());
    const auto tdr = snapshot(b.tdr.params());
    clip_critic_weights(b, -0.01f, 0.01f);
    CHECK(w[0] == 0.01f);
    CHECK(w[1] == -0.01f);
    CHECK(w[2] == 0.005f);
    for (const auto& p : b.critic.params())
        for (float x : p->value.data) CHECK(std::abs(x) <= 0.01f);
    CHECK(snapshot(b.encoder.params()) == encoder);
    CHECK(snapshot(b.tdr.params()) == tdr);
}

TEST_CASE("each update touches only its own networks") {
    auto ds = tiny_data();
    Pretrainer p(tiny_config(), ds);
    const auto batch = p.sample_batch();
    auto& b = p.bundle();

    const auto enc = snapshot(b.encoder.params()), tr = snapshot(b.transformer.params()),
               tdr = snapshot(b.tdr.params()), critic = snapshot(b.critic.params());
    p.critic_step(batch);
    CHECK(snapshot(b.encoder.params()) == enc);
    CHECK(snapshot(b.transformer.params()) == tr);
    CHECK(snapshot(b.tdr.params()) == tdr);
    CHECK(snapshot(b.critic.params()) != critic);

    const auto critic_after = snapshot(b.critic.params());
    p.generator_step(batch);
    CHECK(snapshot(b.critic.params()) == critic_after);
    CHECK(snapshot(b.encoder.params()) != enc);
    CHECK(snapshot(b.transformer.params()) != tr);
    CHECK(snapshot(b.tdr.params()) != tdr);
}

TEST_CASE("zero loss weights leave the generator networks unchanged") {
    auto cfg = tiny_config();
    cfg.alpha = cfg.beta = cfg.kappa = 0;
    cfg.weight_decay = 0;  // decoupled decay would otherwise shrink the weights
    auto ds = tiny_data();
    Pretrainer p(cfg, ds);
    auto& b = p.bundle();
    const auto enc = snapshot(b.encoder.params()), tr = snapshot(b.transformer.params()),
               tdr = snapshot(b.tdr.params()), critic = snapshot(b.critic.params());
    p.run_epoch();
    CHECK(snapshot(b.encoder.params()) == enc);
    CHECK(snapshot(b.transformer.params()) == tr);
    CHECK(snapshot(b.tdr.params()) == tdr);
    CHECK(snapshot(b.critic.params()) != critic);
}

TEST_CASE("combined generator loss equals its weighted components") {
    auto ds = tiny_data(2);
    Pretrainer p(tiny_config(2), ds);
    const auto batch = BatchTensors<double>::from(p.sample_batch());
    auto b = p.bundle().convert<double>();
    const double alpha = 0.5, beta = 0.3, kappa = 0.1;
    Tape<double> t;
    const auto obj = generator_objective(t, b, batch, alpha, beta, kappa);
    Tape<double> t2;
    const auto g = loss_gen(t2, b, batch);
    const double tdr = loss_tdr(t2, b, batch).item();
    CHECK(obj.total.item() == doctest::Approx(alpha * g.mse.item() + beta * g.adv.item() + kappa * tdr).epsilon(1e-12));
    REQUIRE(obj.tdr.has_value());
    CHECK(obj.tdr->item() == tdr);

    Tape<double> t3;
    const auto no_tdr = generator_objective(t3, b, batch, alpha, beta, 0.0);
    CHECK_FALSE(no_tdr.tdr.has_value());
    CHECK(no_tdr.total.item() == doctest::Approx(alpha * g.mse.item() + beta * g.adv.item()).epsilon(1e-12));
}

TEST_CASE("the encoder is shared by the prediction and distance paths") {
    auto ds = tiny_data();
    Pretrainer p(tiny_config(), ds);
    const auto batch = BatchTensors<float>::from(p.sample_batch());
    auto& b = p.bundle();
    auto grad_norm = [&](auto&& loss_fn) {
        b.encoder.params().mark_grads_ready();
        Tape<float> t;
        t.backward(loss_fn(t));
        double n = 0;
        for (const auto& q : b.encoder.params())
            for (float g : q->grad.data) n += double(g) * g;
        return n;
    };
    CHECK(grad_norm([&](Tape<float>& t) { return loss_gen(t, b, batch).mse; }) > 0);
    CHECK(grad_norm([&](Tape<float>& t) { return loss_tdr(t, b, batch); }) > 0);
    CHECK(grad_norm([&](Tape<float>& t) { return loss_dis(t, b, batch); }) == 0);
}

TEST_CASE("pretraining is deterministic, checkpoints, and keeps the clip box") {
    const auto dir = std::filesystem::temp_directory_path() / "stg_test_pretrain_run";
    std::filesystem::remove_all(dir);
    auto cfg = tiny_config(7);
    cfg.critic_steps = 2;
    float worst = 0;
    std::size_t critic_updates = 0;
    PretrainHooks hooks;
    hooks.after_critic_update = [&](std::size_t, const models::ModelBundle<float>& b) {
        ++critic_updates;
        for (const auto& p : b.critic.params())
            for (float x : p->value.data) worst = std::max(worst, std::abs(x));
    };
    auto r1 = pretrain::pretrain(cfg, tiny_data(), dir, hooks);
    auto r2 = pretrain::pretrain(cfg, tiny_data());
    CHECK(critic_updates == cfg.epochs * cfg.critic_steps);
    CHECK(worst <= 0.01f);
    CHECK(models::bundle_hash(r1.bundle) == models::bundle_hash(r2.bundle));
    REQUIRE(r1.reports.size() == cfg.epochs);
    for (std::size_t i = 0; i < cfg.epochs; ++i) {
        CHECK(r1.reports[i].total == r2.reports[i].total);
        CHECK(r1.reports[i].step == i + 1);
    }
    CHECK(std::filesystem::exists(dir / "losses.csv"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "epoch_000002"));
    CHECK(std::filesystem::exists(dir / "checkpoints" / "epoch_000004"));
    auto reloaded = models::load_bundle(dir / "bundle");
    CHECK(models::bundle_hash(reloaded) == models::bundle_hash(r1.bundle));

    cfg.seed = 8;
    CHECK(models::bundle_hash(pretrain::pretrain(cfg, tiny_data()).bundle) != models::bundle_hash(r1.bundle));
    std::filesystem::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts and names the last good checkpoint") {
    const auto dir = std::filesystem::temp_directory_path() / "stg_test_pretrain_nan";
    std::filesystem::remove_all(dir);
    auto cfg = tiny_config();
    cfg.epochs = 6;
    PretrainHooks hooks;
    hooks.after_critic_update = [&](std::size_t epoch, const models::ModelBundle<float>& b) {
        // Fault injection: corrupt the critic during epoch 3.
        if (epoch == 3)
            const_cast<models::ModelBundle<float>&>(b).critic.params().begin()->get()->value[0] = std::nanf("");
    };
    try {
        pretrain::pretrain(cfg, tiny_data(), dir, hooks);
        FAIL("expected an abort");
    } catch (const PretrainAborted& e) {
        CHECK(e.epoch() == 3);
        REQUIRE(e.last_good_checkpoint().has_value());
        CHECK(e.last_good_checkpoint()->filename() == "epoch_000002");
        CHECK(std::string(e.what()).find("epoch_000002") != std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("config parsing") {
    auto c = parse_pretrain_config(R"({"alpha": 0.25, "epochs": 3, "model": {"embed_dim": 16}})");
    CHECK(c.alpha == 0.25);
    CHECK(c.epochs == 3);
    CHECK(c.model.embed_dim == 16);
    CHECK(c.beta == 0.3);
    CHECK(c.kappa == 0.1);
    CHECK(c.clip_low == -0.01);
    CHECK(c.clip_high == 0.01);

    auto round = parse_pretrain_config(to_json_text(c));
    CHECK(to_json_text(round) == to_json_text(c));

    CHECK_THROWS(parse_pretrain_config(R"({"alpah": 0.25})"));
    CHECK_THROWS(parse_pretrain_config(R"({"model": {"embed": 16}})"));
    CHECK_THROWS(parse_pretrain_config(R"({"alpha": -1})"));
    CHECK_THROWS(parse_pretrain_config(R"({"clip_low": 0.01, "clip_high": 0.02})"));
    CHECK_THROWS(parse_pretrain_config("{not json"));
}

TEST_CASE("multi-task pretraining requires one frame geometry") {
    std::vector<env::ExpertDataset> mixed{env::generate_expert_dataset(tiny_env(1, 4), 3),
                                          env::generate_expert_dataset(tiny_env(2, 5), 3)};
    CHECK_THROWS_AS(check_dataset_geometry(mixed), io::FormatError);
    CHECK_THROWS(Pretrainer(tiny_config(), mixed));

    std::vector<env::ExpertDataset> same{env::generate_expert_dataset(tiny_env(1), 3),
                                         env::generate_expert_dataset(tiny_env(9), 3)};
    auto cfg = tiny_config();
    cfg.datasets = {"a", "b"};
    CHECK(cfg.multi_task());
    auto r = pretrain::pretrain(cfg, same);
    CHECK(r.bundle.env_fingerprints.size() == 2);
}

TEST_CASE("loss CSV columns") {
    CHECK(loss_csv_header() == "step,L_dis,L_adv,L_mse,L_tdr,gap");
    LossReport r;
    r.step = 3;
    r.dis = -0.5;
    CHECK(loss_csv_row(r).rfind("3,-0.5,", 0) == 0);
}
