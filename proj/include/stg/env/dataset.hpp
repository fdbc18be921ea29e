// SPDX-License-Identifier: Apache-2.0
#pragma once

// Observation-only expert datasets.
//
// On disk a dataset is a directory holding meta.json and traj_<idx>.bin files.
// Each .bin is: magic "STGD", u32 version, u32 frame count, u32 height,
// u32 width, u32 k, then the raw uint8 frames in temporal order. Frames are
// stored once; stacked states are rebuilt on load. There is no field for
// actions or rewards.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stg/env/grid_env.hpp"
#include "stg/models/symlog.hpp"

namespace stg::env {

inline constexpr char kDatasetMagic[4] = {'S', 'T', 'G', 'D'};
inline constexpr std::uint32_t kDatasetVersion = 1;

struct Trajectory {
    // One frame per timestep; frame t is the newest frame of state t.
    std::vector<std::vector<std::uint8_t>> frames;

    std::size_t length() const { return frames.size(); }
    friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct GenerationReport {
    std::size_t kept = 0;
    std::size_t discarded = 0;
    double success_rate() const {
        const std::size_t attempts = kept + discarded;
        return attempts == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(attempts);
    }
};

struct ExpertDataset {
    std::string fingerprint;
    EnvConfig config;
    FrameGeometry geometry;
    std::vector<Trajectory> trajectories;
    GenerationReport report;

    // State t of trajectory `traj`: frames t-k+1..t, clamped to the first frame.
    ObservationState state(std::size_t traj, std::size_t t) const;
    std::size_t total_states() const;
    std::size_t max_length() const;
};

ExpertDataset generate_expert_dataset(const EnvConfig& config, std::size_t num_trajectories);

void save_dataset(const ExpertDataset& dataset, const std::filesystem::path& dir);
ExpertDataset load_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_trajectory(const Trajectory& traj, const FrameGeometry& geometry);
Trajectory decode_trajectory(std::span<const std::uint8_t> bytes, const FrameGeometry& expected,
                             const std::string& source);

struct Window {
    std::size_t traj = 0;
    std::size_t start = 0;
    std::size_t length = 0;
};

// Uniform over trajectories long enough, then uniform over valid starts.
Window sample_window(const ExpertDataset& dataset, std::size_t n, std::mt19937_64& rng);

struct StatePair {
    std::size_t traj = 0;
    std::size_t i = 0;
    std::size_t j = 0;
    double target = 0.0;  // symlog temporal distance from i to j
};

// i and j drawn independently within one uniformly chosen trajectory.
StatePair sample_pair(const ExpertDataset& dataset, std::mt19937_64& rng);

}  // namespace stg::env
