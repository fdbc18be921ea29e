// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "stg/env/dataset.hpp"
#include "stg/env/grid_env.hpp"
#include "stg/io/binary.hpp"

using namespace stg::env;
using stg::io::FormatError;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("stg_test_env_" + name);
    std::filesystem::remove_all(p);
    return p;
}

// Pixel at the centre of a cell, read from the newest frame of a state.
std::uint8_t cell_pixel(const ObservationState& s, Cell c, int scale) {
    const auto* f = s.frame(s.geometry.stack - 1);
    const int y = c.row * scale + scale / 2, x = c.col * scale + scale / 2;
    return f[y * s.geometry.width + x];
}

ExpertDataset toy_dataset(std::vector<std::size_t> lengths) {
    ExpertDataset ds;
    ds.geometry = {1, 1, 1};
    for (auto n : lengths) {
        Trajectory t;
        for (std::size_t i = 0; i < n; ++i) t.frames.push_back({static_cast<std::uint8_t>(i)});
        ds.trajectories.push_back(t);
    }
    return ds;
}

}  // namespace

TEST_CASE("reset is deterministic per seed") {
    GridEnv a(EnvConfig{}), b(EnvConfig{});
    CHECK(a.reset(42) == b.reset(42));
    CHECK(a.layout().agent == b.layout().agent);
    CHECK(a.layout().goal == b.layout().goal);
}

TEST_CASE("state geometry for G=8, scale 4, k=4") {
    GridEnv env(EnvConfig{});
    auto s = env.reset(1);
    CHECK(s.geometry == FrameGeometry{32, 32, 4});
    CHECK(s.pixels.size() == 4u * 32u * 32u);
    // The first frame is replicated k times at episode start.
    for (int i = 1; i < 4; ++i)
        CHECK(std::equal(s.frame(0), s.frame(0) + 1024, s.frame(i)));
    CHECK(cell_pixel(s, env.layout().agent, 4) == kAgentIntensity);
    CHECK(cell_pixel(s, env.layout().goal, 4) == kGoalIntensity);
}

TEST_CASE("different seeds give different layouts") {
    GridEnv env(EnvConfig{});
    int differ = 0;
    for (int t = 0; t < 100; ++t) {
        env.reset(2 * t);
        const auto a = env.layout();
        env.reset(2 * t + 1);
        const auto b = env.layout();
        if (!(a.agent == b.agent && a.goal == b.goal)) ++differ;
    }
    CHECK(differ > 90);
}

TEST_CASE("chase starts are at least G/2 from the goal") {
    GridEnv env(EnvConfig{});
    for (int s = 0; s < 500; ++s) {
        env.reset(s);
        CHECK(manhattan(env.layout().agent, env.layout().goal) >= 4);
    }
}

TEST_CASE("stepping onto the goal ends the episode with success") {
    GridEnv env(EnvConfig{});
    env.reset_to({{3, 3}, {3, 4}, -1, -1});
    auto r = env.step(Action::Right);
    CHECK(r.done);
    CHECK(r.success);
    CHECK(r.env_reward == 1.0);
    CHECK_THROWS_AS(env.step(Action::Stay), std::logic_error);
}

TEST_CASE("moving into the boundary keeps position but shifts the stack") {
    GridEnv env(EnvConfig{});
    auto s0 = env.reset_to({{0, 0}, {7, 7}, -1, -1});
    auto r = env.step(Action::Up);
    CHECK(env.layout().agent == Cell{0, 0});
    CHECK_FALSE(r.done);
    // Consecutive states overlap in exactly k-1 frames.
    for (int i = 0; i < 3; ++i) CHECK(std::equal(s0.frame(i + 1), s0.frame(i + 2), r.state.frame(i)));
}

TEST_CASE("corridor wall blocks movement except at the gap") {
    EnvConfig cfg;
    cfg.task = Task::Corridor;
    GridEnv env(cfg);
    env.reset_to({{2, 3}, {5, 6}, 4, 5});
    env.step(Action::Right);
    CHECK(env.layout().agent == Cell{2, 3});
    auto s = env.reset_to({{5, 3}, {5, 6}, 4, 5});
    CHECK(cell_pixel(s, {0, 4}, 4) == kWallIntensity);
    CHECK(cell_pixel(s, {5, 4}, 4) == 0);
    env.step(Action::Right);
    CHECK(env.layout().agent == Cell{5, 4});
}

TEST_CASE("horizon exhaustion ends the episode without success") {
    EnvConfig cfg;
    cfg.horizon = 8;
    GridEnv env(cfg);
    env.reset_to({{0, 0}, {7, 7}, -1, -1});
    StepResult r;
    for (int i = 0; i < 8; ++i) {
        CHECK_FALSE(env.done());
        r = env.step(Action::Stay);
    }
    CHECK(r.done);
    CHECK_FALSE(r.success);
    CHECK(r.env_reward == 0.0);
}

TEST_CASE("config validation") {
    EnvConfig cfg;
    cfg.grid = 3;
    CHECK_THROWS(GridEnv{cfg});
    cfg.grid = 8;
    cfg.horizon = 7;
    CHECK_THROWS(GridEnv{cfg});
}

TEST_CASE("greedy expert rule") {
    CHECK(greedy_action({1, 1}, {1, 5}) == Action::Right);
    CHECK(greedy_action({2, 2}, {5, 3}) == Action::Down);
    CHECK(greedy_action({4, 4}, {4, 4}) == Action::Stay);
    // Ties go horizontal.
    CHECK(greedy_action({2, 2}, {0, 0}) == Action::Left);
}

TEST_CASE("expert reaches every goal within 2G steps on empty grids up to G=8") {
    for (int g = 4; g <= 8; ++g) {
        EnvConfig cfg;
        cfg.grid = g;
        cfg.horizon = 4 * g;
        GridEnv env(cfg);
        for (int a = 0; a < g * g; ++a)
            for (int b = 0; b < g * g; ++b) {
                if (a == b) continue;
                env.reset_to({{a / g, a % g}, {b / g, b % g}, -1, -1});
                StepResult r;
                do r = env.step(scripted_expert_action(env.layout(), g));
                while (!r.done);
                REQUIRE(r.success);
                REQUIRE(env.steps_taken() <= 2 * g);
            }
    }
}

TEST_CASE("corridor expert always passes the gap") {
    EnvConfig cfg;
    cfg.task = Task::Corridor;
    GridEnv env(cfg);
    for (int s = 0; s < 300; ++s) {
        env.reset(s);
        StepResult r;
        do r = env.step(scripted_expert_action(env.layout(), cfg.grid));
        while (!r.done);
        REQUIRE(r.success);
    }
}

TEST_CASE("expert dataset generation") {
    EnvConfig cfg;
    cfg.seed = 5;
    auto ds = generate_expert_dataset(cfg, 50);
    CHECK(ds.trajectories.size() == 50);
    CHECK(ds.report.success_rate() == 1.0);
    for (const auto& t : ds.trajectories) CHECK(t.length() >= 2);
    CHECK(generate_expert_dataset(cfg, 1).trajectories.size() == 1);
    CHECK_THROWS(generate_expert_dataset(cfg, 0));

    auto again = generate_expert_dataset(cfg, 50);
    for (std::size_t i = 0; i < 50; ++i)
        CHECK(encode_trajectory(ds.trajectories[i], ds.geometry) ==
              encode_trajectory(again.trajectories[i], again.geometry));
}

TEST_CASE("stacked dataset states match live environment states") {
    EnvConfig cfg;
    cfg.seed = 9;
    auto ds = generate_expert_dataset(cfg, 1);
    GridEnv env(cfg);
    std::mt19937_64 seeds(cfg.seed);
    auto s = env.reset(seeds());
    CHECK(ds.state(0, 0) == s);
    for (std::size_t t = 1; t < ds.trajectories[0].length(); ++t) {
        auto r = env.step(scripted_expert_action(env.layout(), cfg.grid));
        CHECK(ds.state(0, t) == r.state);
    }
}

TEST_CASE("dataset files hold only frames") {
    EnvConfig cfg;
    auto ds = generate_expert_dataset(cfg, 3);
    for (const auto& t : ds.trajectories)
        CHECK(encode_trajectory(t, ds.geometry).size() == 24 + t.length() * 32 * 32);
}

TEST_CASE("dataset save/load round-trip is exact") {
    EnvConfig cfg;
    cfg.seed = 11;
    auto ds = generate_expert_dataset(cfg, 5);
    auto dir = scratch_dir("roundtrip");
    save_dataset(ds, dir);
    auto loaded = load_dataset(dir);
    CHECK(loaded.trajectories == ds.trajectories);
    CHECK(loaded.fingerprint == ds.fingerprint);
    CHECK(loaded.geometry == ds.geometry);
    auto dir2 = scratch_dir("roundtrip2");
    save_dataset(loaded, dir2);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto name = "traj_" + std::to_string(i) + ".bin";
        CHECK(stg::io::read_file(dir / name) == stg::io::read_file(dir2 / name));
    }
    CHECK(stg::io::read_file(dir / "meta.json") == stg::io::read_file(dir2 / "meta.json"));
}

TEST_CASE("corrupt dataset files raise distinct errors") {
    EnvConfig cfg;
    auto ds = generate_expert_dataset(cfg, 1);
    auto bytes = encode_trajectory(ds.trajectories[0], ds.geometry);

    auto kind_of = [&](std::vector<std::uint8_t> b, FrameGeometry g) {
        try {
            decode_trajectory(b, g, "t.bin");
        } catch (const FormatError& e) {
            return std::make_pair(e.kind(), std::string(e.what()));
        }
        return std::make_pair(FormatError::Kind::Io, std::string("no error"));
    };

    auto magic = bytes;
    magic[0] ^= 0xFF;
    auto [k1, m1] = kind_of(magic, ds.geometry);
    CHECK(k1 == FormatError::Kind::BadMagic);
    CHECK(m1.find("bad magic") != std::string::npos);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 10);
    auto [k2, m2] = kind_of(truncated, ds.geometry);
    CHECK(k2 == FormatError::Kind::Truncated);
    CHECK(m2.find("truncated payload") != std::string::npos);
    CHECK(m2.find(std::to_string(bytes.size())) != std::string::npos);
    CHECK(m2.find(std::to_string(truncated.size())) != std::string::npos);

    auto [k3, m3] = kind_of(bytes, FrameGeometry{16, 16, 4});
    CHECK(k3 == FormatError::Kind::Geometry);

    auto version = bytes;
    version[4] = 9;
    CHECK(kind_of(version, ds.geometry).first == FormatError::Kind::BadVersion);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(kind_of(trailing, ds.geometry).first == FormatError::Kind::TrailingBytes);

    CHECK(kind_of(bytes, ds.geometry).second == "no error");
}

TEST_CASE("load_dataset rejects a bin that disagrees with meta.json") {
    EnvConfig cfg;
    auto ds = generate_expert_dataset(cfg, 2);
    auto dir = scratch_dir("corrupt");
    save_dataset(ds, dir);
    auto bin = stg::io::read_file(dir / "traj_1.bin");
    bin.resize(bin.size() - 1);
    stg::io::write_file_atomic(dir / "traj_1.bin", bin);
    CHECK_THROWS_AS(load_dataset(dir), FormatError);
}

TEST_CASE("sample_window boundaries") {
    std::mt19937_64 rng(3);
    auto ds = toy_dataset({3});
    auto w = sample_window(ds, 3, rng);
    CHECK(w.start == 0);
    CHECK(w.length == 3);
    std::set<std::size_t> starts;
    for (int i = 0; i < 200; ++i) starts.insert(sample_window(ds, 2, rng).start);
    CHECK(starts == std::set<std::size_t>{0, 1});
    CHECK_THROWS(sample_window(ds, 4, rng));
    // Only trajectories that are long enough are eligible.
    auto mixed = toy_dataset({2, 10});
    for (int i = 0; i < 100; ++i) CHECK(sample_window(mixed, 5, rng).traj == 1);
}

TEST_CASE("sample_window start index is uniform (chi-square)") {
    std::mt19937_64 rng(17);
    auto ds = toy_dataset({12});
    const std::size_t n = 3, cells = 10, draws = 10000;
    std::vector<double> counts(cells, 0);
    for (std::size_t i = 0; i < draws; ++i) counts[sample_window(ds, n, rng).start] += 1;
    const double expected = static_cast<double>(draws) / cells;
    double chi2 = 0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    // Wilson-Hilferty approximation of the 0.99 quantile for df = cells - 1.
    const double df = cells - 1, z = 2.326348;
    const double crit = df * std::pow(1 - 2 / (9 * df) + z * std::sqrt(2 / (9 * df)), 3);
    CHECK(chi2 < crit);
}

TEST_CASE("sample_pair targets") {
    std::mt19937_64 rng(23);
    auto ds = toy_dataset({6, 9});
    bool saw_equal = false, saw_unit = false;
    for (int k = 0; k < 2000; ++k) {
        auto p = sample_pair(ds, rng);
        CHECK(p.i < ds.trajectories[p.traj].length());
        CHECK(p.j < ds.trajectories[p.traj].length());
        const double gap = static_cast<double>(p.j) - static_cast<double>(p.i);
        CHECK(p.target == doctest::Approx((gap > 0 ? 1 : gap < 0 ? -1 : 0) * std::log(1 + std::abs(gap))));
        CHECK(stg::models::symlog_distance(p.j, p.i) == -p.target);
        if (p.i == p.j) {
            saw_equal = true;
            CHECK(p.target == 0.0);
        }
        if (p.j == p.i + 1) {
            saw_unit = true;
            CHECK(p.target == doctest::Approx(0.6931471805599453).epsilon(1e-12));
        }
    }
    CHECK(saw_equal);
    CHECK(saw_unit);
    ExpertDataset empty;
    CHECK_THROWS(sample_pair(empty, rng));
}
