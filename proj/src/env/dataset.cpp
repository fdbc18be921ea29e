// SPDX-License-Identifier: Apache-2.0
#include "stg/env/dataset.hpp"

#include <algorithm>
#include <cstring>
#include "json.hpp"

#include "stg/io/binary.hpp"

namespace stg::env {

using io::FormatError;
using json = nlohmann::json;

ObservationState ExpertDataset::state(std::size_t traj, std::size_t t) const {
    const Trajectory& tr = trajectories.at(traj);
    if (t >= tr.length()) throw std::out_of_range("state index past trajectory end");
    ObservationState s{geometry, {}};
    s.pixels.reserve(geometry.state_bytes());
    for (int i = geometry.stack - 1; i >= 0; --i) {
        const std::size_t src = t >= static_cast<std::size_t>(i) ? t - i : 0;
        s.pixels.insert(s.pixels.end(), tr.frames[src].begin(), tr.frames[src].end());
    }
    return s;
}

std::size_t ExpertDataset::total_states() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
}

std::size_t ExpertDataset::max_length() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n = std::max(n, t.length());
    return n;
}

ExpertDataset generate_expert_dataset(const EnvConfig& config, std::size_t num_trajectories) {
    if (num_trajectories < 1) throw std::invalid_argument("num_trajectories must be >= 1");
    GridEnv env(config);
    ExpertDataset ds;
    ds.config = config;
    ds.fingerprint = config.fingerprint();
    ds.geometry = env.geometry();
    // Episode seeds come from one stream so (config, seed) fixes the dataset.
    std::mt19937_64 seeds(config.seed);
    while (ds.trajectories.size() < num_trajectories) {
        env.reset(seeds());
        Trajectory tr;
        const auto first = env.render();
        tr.frames.push_back(first);
        StepResult r;
        do {
            r = env.step(scripted_expert_action(env.layout(), config.grid));
            tr.frames.push_back(env.render());
        } while (!r.done);
        if (r.success && tr.length() >= 2) {
            ds.trajectories.push_back(std::move(tr));
            ++ds.report.kept;
        } else {
            ++ds.report.discarded;
        }
    }
    return ds;
}

std::vector<std::uint8_t> encode_trajectory(const Trajectory& traj, const FrameGeometry& geometry) {
    io::ByteWriter w;
    w.raw(kDatasetMagic, 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(traj.length()));
    w.u32(static_cast<std::uint32_t>(geometry.height));
    w.u32(static_cast<std::uint32_t>(geometry.width));
    w.u32(static_cast<std::uint32_t>(geometry.stack));
    for (const auto& f : traj.frames) {
        if (f.size() != geometry.frame_bytes())
            throw FormatError(FormatError::Kind::Geometry, "frame size does not match geometry");
        w.raw(f.data(), f.size());
    }
    return w.buffer();
}

Trajectory decode_trajectory(std::span<const std::uint8_t> bytes, const FrameGeometry& expected,
                             const std::string& source) {
    io::ByteReader r(bytes, source);
    char magic[4] = {};
    if (r.remaining() < 4) throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic (file too short)");
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw FormatError(FormatError::Kind::BadMagic, source + ": bad magic");
    const std::uint32_t version = r.u32("version");
    if (version != kDatasetVersion)
        throw FormatError(FormatError::Kind::BadVersion, source + ": unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32("frame count");
    FrameGeometry g;
    g.height = static_cast<int>(r.u32("height"));
    g.width = static_cast<int>(r.u32("width"));
    g.stack = static_cast<int>(r.u32("k"));
    if (g != expected) {
        throw FormatError(FormatError::Kind::Geometry,
                          source + ": geometry mismatch: file has " + std::to_string(g.height) + "x" +
                              std::to_string(g.width) + "x" + std::to_string(g.stack) + ", expected " +
                              std::to_string(expected.height) + "x" + std::to_string(expected.width) + "x" +
                              std::to_string(expected.stack));
    }
    const std::size_t payload = static_cast<std::size_t>(count) * g.frame_bytes();
    if (r.remaining() < payload) {
        throw FormatError(FormatError::Kind::Truncated,
                          source + ": truncated payload: expected " + std::to_string(r.position() + payload) +
                              " bytes, got " + std::to_string(bytes.size()));
    }
    if (r.remaining() > payload)
        throw FormatError(FormatError::Kind::TrailingBytes, source + ": trailing bytes after frames");
    Trajectory tr;
    tr.frames.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto f = r.take(g.frame_bytes(), "frame");
        tr.frames.emplace_back(f.begin(), f.end());
    }
    return tr;
}

namespace {

std::string traj_name(std::size_t idx) { return "traj_" + std::to_string(idx) + ".bin"; }

}  // namespace

void save_dataset(const ExpertDataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json meta;
    meta["format_version"] = kDatasetVersion;
    meta["fingerprint"] = dataset.fingerprint;
    meta["task"] = to_string(dataset.config.task);
    meta["grid"] = dataset.config.grid;
    meta["scale"] = dataset.config.scale;
    meta["k"] = dataset.config.frame_stack;
    meta["horizon"] = dataset.config.horizon;
    meta["seed"] = dataset.config.seed;
    meta["height"] = dataset.geometry.height;
    meta["width"] = dataset.geometry.width;
    meta["trajectory_count"] = dataset.trajectories.size();
    json lengths = json::array();
    for (const auto& t : dataset.trajectories) lengths.push_back(t.length());
    meta["trajectory_lengths"] = lengths;
    meta["generation"] = {{"kept", dataset.report.kept}, {"discarded", dataset.report.discarded}};
    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i)
        io::write_file_atomic(dir / traj_name(i), encode_trajectory(dataset.trajectories[i], dataset.geometry));
    io::write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

ExpertDataset load_dataset(const std::filesystem::path& dir) {
    const auto meta_bytes = io::read_file(dir / "meta.json");
    json meta;
    try {
        meta = json::parse(meta_bytes.begin(), meta_bytes.end());
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, (dir / "meta.json").string() + ": " + e.what());
    }
    try {
        if (meta.at("format_version").get<std::uint32_t>() != kDatasetVersion)
            throw FormatError(FormatError::Kind::BadVersion, (dir / "meta.json").string() + ": unsupported version");
        ExpertDataset ds;
        ds.fingerprint = meta.at("fingerprint").get<std::string>();
        ds.config.task = task_from_string(meta.at("task").get<std::string>());
        ds.config.grid = meta.at("grid").get<int>();
        ds.config.scale = meta.at("scale").get<int>();
        ds.config.frame_stack = meta.at("k").get<int>();
        ds.config.horizon = meta.at("horizon").get<int>();
        ds.config.seed = meta.at("seed").get<std::uint64_t>();
        ds.geometry = {meta.at("height").get<int>(), meta.at("width").get<int>(), ds.config.frame_stack};
        if (ds.geometry.height != ds.config.frame_height() || ds.geometry.width != ds.config.frame_width())
            throw FormatError(FormatError::Kind::Geometry, (dir / "meta.json").string() + ": geometry inconsistent with grid/scale");
        const auto count = meta.at("trajectory_count").get<std::size_t>();
        const auto lengths = meta.at("trajectory_lengths").get<std::vector<std::size_t>>();
        if (lengths.size() != count)
            throw FormatError(FormatError::Kind::Schema, (dir / "meta.json").string() + ": length list does not match count");
        if (meta.contains("generation")) {
            ds.report.kept = meta["generation"].at("kept").get<std::size_t>();
            ds.report.discarded = meta["generation"].at("discarded").get<std::size_t>();
        }
        for (std::size_t i = 0; i < count; ++i) {
            const auto path = dir / traj_name(i);
            Trajectory tr = decode_trajectory(io::read_file(path), ds.geometry, path.string());
            if (tr.length() != lengths[i])
                throw FormatError(FormatError::Kind::Schema, path.string() + ": frame count disagrees with meta.json");
            if (tr.length() < 2) throw FormatError(FormatError::Kind::Schema, path.string() + ": trajectory shorter than 2");
            ds.trajectories.push_back(std::move(tr));
        }
        return ds;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Schema, (dir / "meta.json").string() + ": " + e.what());
    }
}

Window sample_window(const ExpertDataset& dataset, std::size_t n, std::mt19937_64& rng) {
    if (n == 0) throw std::invalid_argument("sample_window: n must be >= 1");
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < dataset.trajectories.size(); ++i)
        if (dataset.trajectories[i].length() >= n) eligible.push_back(i);
    if (eligible.empty())
        throw std::invalid_argument("sample_window: no trajectory has " + std::to_string(n) + " states");
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    const std::size_t traj = eligible[pick(rng)];
    std::uniform_int_distribution<std::size_t> start(0, dataset.trajectories[traj].length() - n);
    return {traj, start(rng), n};
}

StatePair sample_pair(const ExpertDataset& dataset, std::mt19937_64& rng) {
    if (dataset.trajectories.empty()) throw std::invalid_argument("sample_pair: empty dataset");
    std::uniform_int_distribution<std::size_t> pick(0, dataset.trajectories.size() - 1);
    StatePair p;
    p.traj = pick(rng);
    std::uniform_int_distribution<std::size_t> idx(0, dataset.trajectories[p.traj].length() - 1);
    p.i = idx(rng);
    p.j = idx(rng);
    p.target = models::symlog_distance(static_cast<long long>(p.i), static_cast<long long>(p.j));
    return p;
}

}  // namespace stg::env
