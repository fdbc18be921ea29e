// SPDX-License-Identifier: Apache-2.0
// stg: dataset generation, pretraining, intrinsic-reward RL, evaluation,
// analysis, gradient checks and plots behind one command.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "run_manifest.hpp"
#include "stg/analysis/analysis.hpp"
#include "stg/analysis/gradient_suite.hpp"
#include "stg/analysis/plot.hpp"
#include "stg/io/binary.hpp"
#include "stg/numerics/checkpoint.hpp"
#include "stg/numerics/kernels.hpp"
#include "stg/pretrain/pretrain.hpp"
#include "stg/rl/config.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace stg;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericalFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string read_text(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw DataError(p.string() + ": no such file");
    const auto bytes = io::read_file(p);
    return {bytes.begin(), bytes.end()};
}

fs::path data_root() {
    const char* root = std::getenv("STG_DATA_DIR");
    return root && *root ? fs::path(root) : fs::path("stg_data");
}

// Relative input paths that do not exist here are looked up under the data root.
fs::path resolve_input(const std::string& s) {
    fs::path p(s);
    if (p.is_relative() && !fs::exists(p) && fs::exists(data_root() / p)) return data_root() / p;
    if (!fs::exists(p)) throw DataError(s + ": no such file or directory");
    return p;
}

fs::path output_dir(const std::string& flag, const std::string& fallback) {
    return flag.empty() ? data_root() / fallback : fs::path(flag);
}

void prepare_output(const fs::path& dir, bool force, const std::vector<fs::path>& inputs) {
    for (const auto& in : inputs)
        if (fs::exists(dir) && fs::equivalent(dir, in)) throw UsageError(dir.string() + ": output would overwrite an input");
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw UsageError(dir.string() + ": output directory is not empty (use --force to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
}

fs::path bundle_dir(const fs::path& p) {
    if (fs::exists(p / models::kBundleManifestFile)) return p;
    if (fs::exists(p / "bundle" / models::kBundleManifestFile)) return p / "bundle";
    throw DataError(p.string() + ": not a bundle directory");
}

struct Loaded {
    rl::RlConfig config;
    rl::PolicyNet<float> policy;
};

Loaded load_policy(const fs::path& dir) {
    auto cfg = rl::parse_rl_config(read_text(dir / "rl_config.json"));
    rl::PolicyNet<float> net(cfg.policy, 0);
    num::ParameterSet<float>* sets[] = {&net.params()};
    num::load_checkpoint_into(dir / "policy.stgc", sets);
    return {std::move(cfg), std::move(net)};
}

json eval_json(const rl::EvalReport& r) {
    return {{"episodes", r.episodes},         {"success_rate", r.success_rate}, {"success_std", r.success_std},
            {"mean_return", r.mean_return},   {"return_std", r.return_std},     {"mean_length", r.mean_length},
            {"returns", r.returns}};
}

json continuity_json(const analysis::ContinuityReport& r) {
    return {{"adjacent_mean", r.adjacent_mean}, {"random_mean", r.random_mean},
            {"ratio", r.ratio},                 {"degenerate", r.degenerate},
            {"random_samples", r.random_samples}};
}

// Environment flags shared by gen-data, train and eval.
struct EnvFlags {
    std::string task;
    int grid = 0, scale = 0, horizon = 0, k = 0;

    void add(CLI::App* app) {
        app->add_option("--task", task, "chase or corridor");
        app->add_option("--grid", grid, "grid side G")->check(CLI::PositiveNumber);
        app->add_option("--scale", scale, "pixels per cell")->check(CLI::PositiveNumber);
        app->add_option("--horizon", horizon, "episode step limit")->check(CLI::PositiveNumber);
        app->add_option("--k", k, "stacked frames per state")->check(CLI::PositiveNumber);
    }
    void apply(env::EnvConfig& c) const {
        if (!task.empty()) c.task = env::task_from_string(task);
        if (grid) c.grid = grid;
        if (scale) c.scale = scale;
        if (horizon) c.horizon = horizon;
        if (k) c.frame_stack = k;
    }
};

// --- gen-data ---------------------------------------------------------------

struct GenData {
    EnvFlags env;
    std::string config, out;
    std::size_t traj = 50;
    std::uint64_t seed = 0;
    bool force = false;

    int run() {
        env::EnvConfig c;
        if (!config.empty()) c = rl::parse_env_config(read_text(config));
        env.apply(c);
        c.seed = seed;
        c.validate();
        if (traj == 0) throw UsageError("--traj must be >= 1");
        const fs::path dir = output_dir(out, "datasets/" + env::to_string(c.task) + "_g" + std::to_string(c.grid) +
                                                 "_s" + std::to_string(seed));
        std::vector<fs::path> inputs;
        if (!config.empty()) inputs.push_back(config);
        prepare_output(dir, force, inputs);
        json resolved = json::parse(rl::to_json_text(c));
        resolved["trajectories"] = traj;
        cli::RunManifest m(dir, "gen-data", resolved, seed, inputs);
        m.start();
        const auto ds = env::generate_expert_dataset(c, traj);
        env::save_dataset(ds, dir);
        m.add_output(dir);
        m.set_result("fingerprint", ds.fingerprint);
        m.set_result("kept", ds.report.kept);
        m.set_result("discarded", ds.report.discarded);
        m.finish("complete");
        std::printf("wrote %zu trajectories to %s (expert success %.3f)\n", ds.trajectories.size(),
                    dir.string().c_str(), ds.report.success_rate());
        return kOk;
    }
};

// --- pretrain ---------------------------------------------------------------

struct Pretrain {
    std::vector<std::string> data;
    std::string config, out;
    std::optional<double> alpha, beta, kappa, glr, clr;
    std::optional<std::size_t> epochs, batch, seq_len, tdr_pairs, critic_steps, checkpoint_every;
    std::uint64_t seed = 0;
    bool force = false;

    int run() {
        pretrain::PretrainConfig c;
        if (!config.empty()) c = pretrain::parse_pretrain_config(read_text(config));
        if (alpha) c.alpha = *alpha;
        if (beta) c.beta = *beta;
        if (kappa) c.kappa = *kappa;
        if (glr) c.generator_lr = *glr;
        if (clr) c.critic_lr = *clr;
        if (epochs) c.epochs = *epochs;
        if (batch) c.batch_size = *batch;
        if (seq_len) c.seq_len = *seq_len;
        if (tdr_pairs) c.tdr_pairs = *tdr_pairs;
        if (critic_steps) c.critic_steps = *critic_steps;
        if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
        c.seed = seed;
        std::vector<fs::path> inputs;
        c.datasets.clear();
        for (const auto& d : data) {
            inputs.push_back(resolve_input(d));
            c.datasets.push_back(inputs.back().string());
        }
        c.validate();
        std::vector<env::ExpertDataset> sets;
        for (const auto& p : inputs) sets.push_back(env::load_dataset(p));
        try {
            pretrain::check_dataset_geometry(sets);
        } catch (const io::FormatError& e) {
            std::string fps;
            for (const auto& s : sets) fps += "\n  " + s.fingerprint;
            throw io::FormatError(io::FormatError::Kind::Geometry, std::string(e.what()) + "; datasets:" + fps);
        }
        if (!config.empty()) inputs.push_back(config);
        const fs::path dir = output_dir(out, "pretrain/s" + std::to_string(seed));
        prepare_output(dir, force, inputs);
        cli::RunManifest m(dir, "pretrain", json::parse(pretrain::to_json_text(c)), seed, inputs);
        m.start();
        io::write_text_atomic(dir / "pretrain_config.json", pretrain::to_json_text(c));
        pretrain::PretrainHooks hooks;
        const std::size_t every = std::max<std::size_t>(1, c.epochs / 10);
        hooks.after_epoch = [&](const pretrain::LossReport& r) {
            if (r.step % every == 0 || r.step == c.epochs)
                std::printf("epoch %zu  dis %.4g  adv %.4g  mse %.4g  tdr %.4g  gap %.4g\n", r.step, r.dis, r.adv,
                            r.mse, r.tdr, r.gap);
        };
        try {
            auto result = pretrain::pretrain(c, std::move(sets), dir, hooks);
            m.set_result("bundle_hash", models::bundle_hash(result.bundle));
        } catch (const pretrain::PretrainAborted& e) {
            m.set_result("error", e.what());
            m.finish("aborted");
            throw;
        }
        for (const char* o : {"bundle", "losses.csv", "checkpoints", "pretrain_config.json"}) m.add_output(dir / o);
        m.finish("complete");
        std::printf("bundle written to %s\n", (dir / "bundle").string().c_str());
        return kOk;
    }
};

// --- train ------------------------------------------------------------------

struct Train {
    EnvFlags env;
    std::string bundle, config, out, mode;
    std::optional<double> eta, nu;
    std::optional<std::size_t> steps, context, eval_every, eval_episodes;
    std::uint64_t seed = 0;
    bool force = false;

    int run() {
        rl::RlConfig c;
        bool nu_from_config = false;
        if (!config.empty()) {
            const std::string text = read_text(config);
            c = rl::parse_rl_config(text);
            const json j = json::parse(text);
            nu_from_config = j.contains("reward") && j["reward"].contains("nu");
        }
        env.apply(c.env);
        if (!mode.empty()) c.reward.kind = rl::reward_kind_from_string(mode);
        if (eta) c.reward.eta = *eta;
        if (nu) c.reward.nu = *nu;
        if (c.reward.kind == rl::RewardKind::WithProgression && !nu && !nu_from_config)
            throw UsageError("--mode with-progression requires --nu");
        if (steps) c.total_steps = *steps;
        if (context) c.reward_context = *context;
        if (eval_every) c.eval_every = *eval_every;
        if (eval_episodes) c.eval_episodes = *eval_episodes;
        c.seed = seed;
        c.policy.frame = {c.env.frame_height(), c.env.frame_width(), c.env.frame_stack};
        c.validate();

        const fs::path bdir = bundle_dir(resolve_input(bundle));
        std::vector<fs::path> inputs{bdir};
        if (!config.empty()) inputs.push_back(config);
        const auto b = models::load_bundle(bdir);
        const fs::path dir = output_dir(out, "train/" + rl::to_string(c.reward.kind) + "_s" + std::to_string(seed));
        prepare_output(dir, force, inputs);
        cli::RunManifest m(dir, "train", json::parse(rl::to_json_text(c)), seed, inputs);
        m.start();
        io::write_text_atomic(dir / "rl_config.json", rl::to_json_text(c));
        rl::RlHooks hooks;
        hooks.after_eval = [](const rl::CurvePoint& p) {
            std::printf("update %zu  steps %zu  reward %.4g  success %.3f  entropy %.3f\n", p.update, p.env_steps,
                        p.mean_intrinsic_reward, p.eval_success, p.entropy);
            std::fflush(stdout);
        };
        try {
            auto result = rl::train_rl(c, b, dir, hooks);
            m.set_result("bundle_hash", result.bundle_hash);
            if (!result.curve.empty()) m.set_result("final_success", result.curve.back().eval_success);
        } catch (const rl::RlAborted& e) {
            m.set_result("error", e.what());
            m.finish("aborted");
            throw;
        }
        for (const char* o : {"policy.stgc", "curves.csv", "checkpoints", "rl_config.json"}) m.add_output(dir / o);
        m.finish("complete");
        return kOk;
    }
};

// --- eval -------------------------------------------------------------------

struct Eval {
    EnvFlags env;
    std::string policy, controller, out;
    std::size_t episodes = 100;
    std::uint64_t seed = 0;
    bool force = false;

    int run() {
        if (policy.empty() == controller.empty()) throw UsageError("give exactly one of --policy or --controller");
        if (episodes == 0) throw UsageError("--episodes must be >= 1");
        std::vector<fs::path> inputs;
        rl::EvalReport report;
        env::EnvConfig ec;
        json resolved;
        std::optional<Loaded> loaded;
        if (!policy.empty()) {
            inputs.push_back(resolve_input(policy));
            loaded.emplace(load_policy(inputs.back()));
            ec = loaded->config.env;
            resolved["policy"] = inputs.back().string();
        } else {
            if (controller != "expert" && controller != "random")
                throw UsageError("--controller must be expert or random");
            resolved["controller"] = controller;
        }
        env.apply(ec);
        ec.validate();
        resolved["env"] = json::parse(rl::to_json_text(ec));
        resolved["episodes"] = episodes;
        const fs::path dir = output_dir(out, "eval/" + (policy.empty() ? controller : fs::path(policy).filename().string()) +
                                                 "_s" + std::to_string(seed));
        prepare_output(dir, force, inputs);
        cli::RunManifest m(dir, "eval", resolved, seed, inputs);
        m.start();
        if (loaded) {
            report = rl::evaluate(loaded->policy, ec, episodes, seed);
        } else if (controller == "expert") {
            report = rl::evaluate_controller(
                [](const env::GridEnv& g, const env::ObservationState&) {
                    return env::scripted_expert_action(g.layout(), g.config().grid);
                },
                ec, episodes, seed);
        } else {
            std::mt19937_64 rng(seed);
            report = rl::evaluate_controller(
                [&](const env::GridEnv&, const env::ObservationState&) {
                    return static_cast<env::Action>(rng() % env::kNumActions);
                },
                ec, episodes, seed);
        }
        io::write_text_atomic(dir / "eval.json", eval_json(report).dump(2) + "\n");
        m.add_output(dir / "eval.json");
        m.set_result("success_rate", report.success_rate);
        m.finish("complete");
        std::printf("episodes %zu  success %.3f +- %.3f  mean length %.1f\n", report.episodes, report.success_rate,
                    report.success_std, report.mean_length);
        return kOk;
    }
};

// --- analyze ----------------------------------------------------------------

struct Analyze {
    std::vector<std::string> bundles;
    std::string data, out;
    bool continuity = false, histogram = false, projection = false;
    std::size_t samples = 2000;
    std::uint64_t seed = 0;
    bool force = false;

    int run() {
        if (!continuity && !histogram && !projection) continuity = histogram = projection = true;
        std::vector<std::pair<std::string, fs::path>> labelled;
        for (const auto& spec : bundles) {
            const auto eq = spec.find('=');
            const std::string label = eq == std::string::npos ? "bundle" + std::to_string(labelled.size()) : spec.substr(0, eq);
            const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
            labelled.emplace_back(label, bundle_dir(resolve_input(path)));
        }
        const fs::path dpath = resolve_input(data);
        std::vector<fs::path> inputs{dpath};
        for (const auto& [_, p] : labelled) inputs.push_back(p);
        const fs::path dir = output_dir(out, "analysis/s" + std::to_string(seed));
        prepare_output(dir, force, inputs);
        json resolved{{"data", dpath.string()},
                      {"continuity", continuity},
                      {"histogram", histogram},
                      {"projection", projection},
                      {"samples", samples}};
        for (const auto& [label, p] : labelled) resolved["bundles"][label] = p.string();
        cli::RunManifest m(dir, "analyze", resolved, seed, inputs);
        m.start();
        const auto ds = env::load_dataset(dpath);
        json cont = json::object();
        for (const auto& [label, p] : labelled) {
            const auto b = models::load_bundle(p);
            const auto emb = analysis::embed_dataset(ds, b);
            if (continuity) {
                const auto r = analysis::embedding_continuity(emb, samples, seed);
                cont[label] = continuity_json(r);
                std::printf("%s: continuity ratio %.4f (adjacent %.4g, random %.4g)%s\n", label.c_str(), r.ratio,
                            r.adjacent_mean, r.random_mean, r.degenerate ? " [degenerate]" : "");
            }
            if (histogram) {
                const auto h = analysis::critic_histogram(ds, b, 4, 1, 30, seed);
                const auto path = dir / ("histogram_" + label + ".csv");
                io::write_text_atomic(path, analysis::histogram_csv(h));
                m.add_output(path);
                std::printf("%s: critic means expert %.4g predicted %.4g shuffled %.4g\n", label.c_str(),
                            analysis::ScoreHistogram::mean(h.expert), analysis::ScoreHistogram::mean(h.predicted),
                            analysis::ScoreHistogram::mean(h.shuffled));
            }
            if (projection) {
                std::size_t rows = 0;
                for (const auto& t : emb) rows += t.shape[0];
                const std::size_t d = emb.front().shape[1];
                num::Tensor<double> all({rows, d});
                std::vector<std::pair<std::size_t, std::size_t>> ids;
                std::size_t r = 0;
                for (std::size_t k = 0; k < emb.size(); ++k)
                    for (std::size_t t = 0; t < emb[k].shape[0]; ++t, ++r) {
                        std::copy_n(emb[k].data.begin() + t * d, d, all.data.begin() + r * d);
                        ids.emplace_back(k, t);
                    }
                const auto path = dir / ("projection_" + label + ".csv");
                io::write_text_atomic(path, analysis::projection_csv(analysis::pca(all, 2), ids));
                m.add_output(path);
            }
        }
        if (continuity) {
            io::write_text_atomic(dir / "continuity.json", cont.dump(2) + "\n");
            m.add_output(dir / "continuity.json");
            m.set_result("continuity", cont);
        }
        m.finish("complete");
        return kOk;
    }
};

// --- gradcheck --------------------------------------------------------------

struct GradCheck {
    bool f64 = true;
    std::uint64_t seed = 0;

    int run() {
        (void)f64;  // the suite always runs at 64-bit precision
        const auto entries = analysis::run_gradient_suite(seed);
        double worst = 0;
        std::string worst_loss;
        for (const auto& e : entries) {
            std::printf("%-18s max rel err %.3e  at %s[%zu] (analytic %.6e, numeric %.6e; %zu entries)\n",
                        e.loss.c_str(), e.report.max_rel_error, e.report.worst_param.c_str(), e.report.worst_index,
                        e.report.worst_analytic, e.report.worst_numeric, e.report.entries_checked);
            if (!(e.report.max_rel_error <= worst)) {
                worst = e.report.max_rel_error;
                worst_loss = e.loss;
            }
        }
        const bool ok = worst < analysis::kGradientTolerance;
        std::printf("%s: worst %.3e in %s (tolerance %.0e)\n", ok ? "PASS" : "FAIL", worst, worst_loss.c_str(),
                    analysis::kGradientTolerance);
        return ok ? kOk : kNumerical;
    }
};

// --- plot -------------------------------------------------------------------

struct Plot {
    std::vector<std::string> series;
    std::string out;
    bool force = false;

    int run() {
        std::vector<analysis::CurveGroup> groups;
        std::vector<fs::path> inputs;
        for (const auto& spec : series) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos) throw UsageError("--series expects label=run1.csv,run2.csv");
            analysis::CurveGroup g{spec.substr(0, eq), {}};
            std::stringstream ss(spec.substr(eq + 1));
            std::string item;
            while (std::getline(ss, item, ','))
                if (!item.empty()) {
                    g.csvs.push_back(resolve_input(item));
                    inputs.push_back(g.csvs.back());
                }
            if (g.csvs.empty()) throw UsageError("--series " + g.label + " lists no files");
            groups.push_back(std::move(g));
        }
        const fs::path dir = output_dir(out, "plots");
        prepare_output(dir, force, {});
        json resolved = json::object();
        for (const auto& g : groups) {
            json files = json::array();
            for (const auto& p : g.csvs) files.push_back(p.string());
            resolved["series"][g.label] = files;
        }
        cli::RunManifest m(dir, "plot", resolved, 0, inputs);
        m.start();
        for (const auto& p : analysis::plot_curves(groups, dir / "curve")) {
            m.add_output(p);
            std::printf("wrote %s\n", p.string().c_str());
        }
        m.finish("complete");
        return kOk;
    }
};

int report(const char* kind, const std::exception& e, int code) {
    std::fprintf(stderr, "stg: %s: %s\n", kind, e.what());
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"State-to-Go: observation-only pretraining and intrinsic-reward RL"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads for numeric kernels")->check(CLI::PositiveNumber);

    GenData gen;
    auto* g = app.add_subcommand("gen-data", "generate an expert dataset");
    gen.env.add(g);
    g->add_option("--traj", gen.traj, "trajectories to keep");
    g->add_option("--seed", gen.seed, "generation seed")->required();
    g->add_option("--config", gen.config, "environment config JSON");
    g->add_option("--out", gen.out, "output directory");
    g->add_flag("--force", gen.force, "replace a non-empty output directory");

    Pretrain pre;
    auto* p = app.add_subcommand("pretrain", "pretrain encoder, transformer, critic and regressor");
    p->add_option("--data", pre.data, "dataset directories (several enable multi-task mode)")->required();
    p->add_option("--config", pre.config, "pretrain config JSON");
    p->add_option("--alpha", pre.alpha, "prediction loss weight");
    p->add_option("--beta", pre.beta, "adversarial loss weight");
    p->add_option("--kappa", pre.kappa, "temporal distance loss weight (0 removes it)");
    p->add_option("--glr", pre.glr, "generator learning rate");
    p->add_option("--clr", pre.clr, "critic learning rate");
    p->add_option("--epochs", pre.epochs, "epochs");
    p->add_option("--batch", pre.batch, "windows per epoch");
    p->add_option("--seq-len", pre.seq_len, "states per window");
    p->add_option("--tdr-pairs", pre.tdr_pairs, "temporal distance pairs per epoch");
    p->add_option("--critic-steps", pre.critic_steps, "critic updates per generator update");
    p->add_option("--checkpoint-every", pre.checkpoint_every, "epochs between checkpoints");
    p->add_option("--seed", pre.seed, "seed")->required();
    p->add_option("--out", pre.out, "output directory");
    p->add_flag("--force", pre.force, "replace a non-empty output directory");

    Train tr;
    auto* t = app.add_subcommand("train", "train a policy on intrinsic rewards");
    tr.env.add(t);
    t->add_option("--bundle", tr.bundle, "pretrained bundle (or pretrain run) directory")->required();
    t->add_option("--config", tr.config, "RL config JSON");
    t->add_option("--mode", tr.mode, "stg, guide-only or with-progression");
    t->add_option("--eta", tr.eta, "intrinsic reward scale");
    t->add_option("--nu", tr.nu, "progression reward scale (with-progression)");
    t->add_option("--steps", tr.steps, "environment steps");
    t->add_option("--context", tr.context, "embeddings the transformer sees per reward");
    t->add_option("--eval-every", tr.eval_every, "updates between evaluations");
    t->add_option("--eval-episodes", tr.eval_episodes, "episodes per evaluation");
    t->add_option("--seed", tr.seed, "seed")->required();
    t->add_option("--out", tr.out, "output directory");
    t->add_flag("--force", tr.force, "replace a non-empty output directory");

    Eval ev;
    auto* e = app.add_subcommand("eval", "evaluate a policy or a reference controller");
    ev.env.add(e);
    e->add_option("--policy", ev.policy, "trained policy directory");
    e->add_option("--controller", ev.controller, "expert or random");
    e->add_option("--episodes", ev.episodes, "episodes");
    e->add_option("--seed", ev.seed, "seed")->required();
    e->add_option("--out", ev.out, "output directory");
    e->add_flag("--force", ev.force, "replace a non-empty output directory");

    Analyze an;
    auto* a = app.add_subcommand("analyze", "continuity, critic histograms and projections");
    a->add_option("--bundle", an.bundles, "label=bundle_dir (repeatable)")->required();
    a->add_option("--data", an.data, "dataset directory")->required();
    a->add_flag("--continuity", an.continuity, "embedding continuity ratio");
    a->add_flag("--histogram", an.histogram, "critic score histograms");
    a->add_flag("--pca", an.projection, "2-D projection of embeddings");
    a->add_option("--samples", an.samples, "random pairs for continuity (>= 1000)");
    a->add_option("--seed", an.seed, "seed")->required();
    a->add_option("--out", an.out, "output directory");
    a->add_flag("--force", an.force, "replace a non-empty output directory");

    GradCheck gc;
    auto* c = app.add_subcommand("gradcheck", "finite-difference check of every loss");
    c->add_flag("--f64", gc.f64, "64-bit precision (always on)");
    c->add_option("--seed", gc.seed, "seed")->required();

    Plot pl;
    auto* l = app.add_subcommand("plot", "learning curves with seed bands");
    l->add_option("--series", pl.series, "label=run1.csv,run2.csv (repeatable)")->required();
    l->add_option("--out", pl.out, "output directory");
    l->add_flag("--force", pl.force, "replace a non-empty output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& err) {
        return app.exit(err);
    } catch (const CLI::CallForAllHelp& err) {
        return app.exit(err);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return kUsage;
    }
    kernels::set_num_threads(threads);

    try {
        if (*g) return gen.run();
        if (*p) return pre.run();
        if (*t) return tr.run();
        if (*e) return ev.run();
        if (*a) return an.run();
        if (*c) return gc.run();
        if (*l) return pl.run();
    } catch (const UsageError& err) {
        return report("usage", err, kUsage);
    } catch (const std::invalid_argument& err) {
        return report("invalid argument", err, kUsage);
    } catch (const num::NumericalError& err) {
        return report("numerical failure", err, kNumerical);
    } catch (const pretrain::PretrainAborted& err) {
        return report("numerical failure", err, kNumerical);
    } catch (const rl::RlAborted& err) {
        return report("numerical failure", err, kNumerical);
    } catch (const NumericalFailure& err) {
        return report("numerical failure", err, kNumerical);
    } catch (const std::exception& err) {
        return report("error", err, kData);
    }
    return kUsage;
}
