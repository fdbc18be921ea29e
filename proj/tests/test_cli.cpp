// SPDX-License-Identifier: Apache-2.0
// End-to-end checks of the stg command: exit codes, manifests, determinism.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "doctest.h"
#include "json.hpp"
#include "stg/env/dataset.hpp"
#include "stg/io/binary.hpp"

#ifndef STG_CLI
#error "STG_CLI must name the stg executable"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Scratch {
    fs::path root;
    Scratch() : root(fs::temp_directory_path() / ("stg_cli_test_" + std::to_string(::getpid()))) {
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Scratch() { fs::remove_all(root); }
    std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

int run(const std::string& args, const std::string& log) {
    const std::string cmd = std::string(STG_CLI) + " " + args + " >" + log + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    const auto bytes = stg::io::read_file(p);
    return {bytes.begin(), bytes.end()};
}

json manifest(const fs::path& dir) { return json::parse(slurp(dir / "manifest.json")); }

// Tiny dataset shared by several cases.
std::string small_data(const Scratch& s, const std::string& name = "data") {
    const std::string out = s / name;
    if (!fs::exists(out)) REQUIRE(run("gen-data --traj 4 --seed 3 --out " + out, s / "gen.log") == 0);
    return out;
}

}  // namespace

TEST_CASE("gen-data writes a dataset with a finished manifest and is reproducible") {
    Scratch s;
    REQUIRE(run("gen-data --task chase --grid 8 --traj 6 --seed 1 --out " + s / "a", s / "log") == 0);
    REQUIRE(run("gen-data --task chase --grid 8 --traj 6 --seed 1 --out " + s / "b", s / "log") == 0);
    const auto ds = stg::env::load_dataset(s / "a");
    CHECK(ds.trajectories.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        const std::string f = "traj_" + std::to_string(i) + ".bin";
        CHECK(slurp(s.root / "a" / f) == slurp(s.root / "b" / f));
    }
    CHECK(slurp(s.root / "a" / "meta.json") == slurp(s.root / "b" / "meta.json"));

    const auto m = manifest(s.root / "a");
    CHECK(m["subcommand"] == "gen-data");
    CHECK(m["status"] == "complete");
    CHECK(m["seed"] == 1);
    CHECK(m["config"]["trajectories"] == 6);
    CHECK(m["config"]["task"] == "chase");
    CHECK(m["input_hash"].get<std::string>().size() == 64);
    CHECK(m["started_at"].is_string());
    CHECK(m["finished_at"].is_string());
    CHECK(m["results"]["fingerprint"] == ds.fingerprint);
}

TEST_CASE("usage errors exit with code 1") {
    Scratch s;
    CHECK(run("gen-data --traj 0 --seed 1 --out " + s / "z", s / "log") == 1);
    CHECK(slurp(s / "log").find("--traj") != std::string::npos);
    CHECK(run("gen-data --traj 2", s / "log") == 1);  // seed is mandatory
    CHECK(run("no-such-command", s / "log") == 1);
    CHECK(run("gen-data --traj 2 --seed 1 --task maze --out " + s / "m", s / "log") == 1);

    const auto data = small_data(s);
    CHECK(run("gen-data --traj 4 --seed 3 --out " + data, s / "log") == 1);  // not empty
    CHECK(run("gen-data --traj 4 --seed 3 --force --out " + data, s / "log") == 0);

    REQUIRE(run("pretrain --data " + data + " --epochs 1 --seed 1 --out " + s / "pt", s / "log") == 0);
    CHECK(run("train --bundle " + s / "pt" + " --mode with-progression --steps 512 --seed 1 --out " + s / "tr",
              s / "log") == 1);
    CHECK(slurp(s / "log").find("--nu") != std::string::npos);
    CHECK(run("eval --seed 1 --out " + s / "ev", s / "log") == 1);  // neither policy nor controller
}

TEST_CASE("missing or malformed artifacts exit with code 2") {
    Scratch s;
    CHECK(run("pretrain --data " + s / "absent" + " --seed 1 --out " + s / "pt", s / "log") == 2);
    CHECK(run("eval --policy " + s / "absent" + " --seed 1 --out " + s / "ev", s / "log") == 2);
    CHECK(run("train --bundle " + s / "absent" + " --seed 1 --out " + s / "tr", s / "log") == 2);

    const auto data = small_data(s);
    stg::io::write_file_atomic(s.root / "data" / "traj_0.bin", std::vector<std::uint8_t>{1, 2, 3});
    CHECK(run("pretrain --data " + data + " --epochs 1 --seed 1 --out " + s / "pt", s / "log") == 2);
}

TEST_CASE("pretraining on datasets of different geometry lists their fingerprints") {
    Scratch s;
    const auto a = small_data(s, "g8");
    REQUIRE(run("gen-data --grid 6 --traj 3 --seed 2 --out " + s / "g6", s / "log") == 0);
    CHECK(run("pretrain --data " + a + " " + s / "g6" + " --epochs 1 --seed 1 --out " + s / "pt", s / "log") == 2);
    const auto log = slurp(s / "log");
    CHECK(log.find(stg::env::load_dataset(a).fingerprint) != std::string::npos);
    CHECK(log.find(stg::env::load_dataset(s / "g6").fingerprint) != std::string::npos);
}

TEST_CASE("pretrain, train and eval chain, freezing the resolved config") {
    Scratch s;
    const auto data = small_data(s);
    REQUIRE(run("pretrain --data " + data + " --epochs 2 --kappa 0 --checkpoint-every 1 --seed 4 --out " + s / "pt",
                s / "log") == 0);
    const auto pm = manifest(s.root / "pt");
    CHECK(pm["config"]["kappa"] == 0.0);
    CHECK(pm["config"]["alpha"] == 0.5);  // defaults survive
    CHECK(pm["config"]["epochs"] == 2);
    CHECK(fs::exists(s.root / "pt" / "bundle" / "bundle.stgc"));
    CHECK(fs::exists(s.root / "pt" / "losses.csv"));
    CHECK(fs::exists(s.root / "pt" / "checkpoints" / "epoch_000002"));
    const auto data_hash = pm["input_hash"];

    REQUIRE(run("train --bundle " + s / "pt" + " --mode guide-only --steps 1024 --eval-every 1 --eval-episodes 3 "
                "--seed 2 --out " + s / "tr",
                s / "log") == 0);
    const auto tm = manifest(s.root / "tr");
    CHECK(tm["config"]["reward"]["mode"] == "guide-only");
    CHECK(tm["results"]["bundle_hash"].is_string());
    CHECK(fs::exists(s.root / "tr" / "policy.stgc"));
    CHECK(fs::exists(s.root / "tr" / "curves.csv"));

    REQUIRE(run("eval --policy " + s / "tr" + " --episodes 7 --seed 5 --out " + s / "ev", s / "log") == 0);
    const auto report = json::parse(slurp(s.root / "ev" / "eval.json"));
    CHECK(report["episodes"] == 7);
    CHECK(report["returns"].size() == 7);

    // Inputs are untouched by downstream runs.
    REQUIRE(run("pretrain --data " + data + " --epochs 1 --seed 4 --out " + s / "pt2", s / "log") == 0);
    CHECK(manifest(s.root / "pt2")["input_hash"] == data_hash);
}

TEST_CASE("eval of the scripted expert reports the exact episode count") {
    Scratch s;
    REQUIRE(run("eval --controller expert --episodes 100 --seed 9 --out " + s / "ev", s / "log") == 0);
    const auto report = json::parse(slurp(s.root / "ev" / "eval.json"));
    CHECK(report["episodes"] == 100);
    CHECK(report["returns"].size() == 100);
    CHECK(report["success_rate"] == 1.0);
}

TEST_CASE("config files are overridden by flags and reject unknown keys") {
    Scratch s;
    const auto data = small_data(s);
    stg::io::write_text_atomic(s.root / "pc.json", R"({"kappa": 0.7, "epochs": 1, "seq_len": 4})");
    REQUIRE(run("pretrain --config " + s / "pc.json" + " --data " + data + " --kappa 0.2 --seed 1 --out " + s / "pt",
                s / "log") == 0);
    const auto m = manifest(s.root / "pt");
    CHECK(m["config"]["kappa"] == 0.2);
    CHECK(m["config"]["seq_len"] == 4);
    stg::io::write_text_atomic(s.root / "bad.json", R"({"kapa": 0.7})");
    CHECK(run("pretrain --config " + s / "bad.json" + " --data " + data + " --seed 1 --out " + s / "pt3", s / "log") ==
          1);
}

TEST_CASE("analyze writes continuity for each labelled bundle, and plot writes figures") {
    Scratch s;
    const auto data = small_data(s);
    REQUIRE(run("pretrain --data " + data + " --epochs 1 --seed 1 --out " + s / "a", s / "log") == 0);
    REQUIRE(run("pretrain --data " + data + " --epochs 1 --kappa 0 --seed 1 --out " + s / "b", s / "log") == 0);
    REQUIRE(run("analyze --continuity --bundle stg=" + s / "a" + " --bundle minus=" + s / "b" + " --data " + data +
                    " --seed 1 --out " + s / "an",
                s / "log") == 0);
    const auto cont = json::parse(slurp(s.root / "an" / "continuity.json"));
    CHECK(cont.contains("stg"));
    CHECK(cont.contains("minus"));
    CHECK(cont["stg"]["random_samples"] == 2000);

    REQUIRE(run("train --bundle " + s / "a" + " --steps 1024 --eval-every 1 --eval-episodes 2 --seed 1 --out " +
                    s / "tr",
                s / "log") == 0);
    REQUIRE(run("plot --series stg=" + s / "tr/curves.csv" + " --out " + s / "pl", s / "log") == 0);
    CHECK(fs::exists(s.root / "pl" / "curve_eval_success.png"));
    CHECK(manifest(s.root / "pl")["status"] == "complete");
}

TEST_CASE("gradcheck exits 0 when every loss passes") {
    Scratch s;
    CHECK(run("gradcheck --f64 --seed 1", s / "log") == 0);
    CHECK(slurp(s / "log").find("PASS") != std::string::npos);
}
