// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stg::env {

enum class Task { Chase, Corridor };
enum class Action : std::uint8_t { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
inline constexpr std::size_t kNumActions = 5;

std::string to_string(Task task);
Task task_from_string(const std::string& name);
std::string to_string(Action action);

struct EnvConfig {
    Task task = Task::Chase;
    int grid = 8;
    int scale = 4;
    int horizon = 64;
    int frame_stack = 4;
    std::uint64_t seed = 0;

    int frame_height() const { return grid * scale; }
    int frame_width() const { return grid * scale; }
    // Identifies the rendering and dynamics, not the seed.
    std::string fingerprint() const;
    void validate() const;
};

struct Cell {
    int row = 0;
    int col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
};

struct FrameGeometry {
    int height = 0;
    int width = 0;
    int stack = 0;
    std::size_t frame_bytes() const { return static_cast<std::size_t>(height) * width; }
    std::size_t state_bytes() const { return frame_bytes() * stack; }
    friend bool operator==(const FrameGeometry&, const FrameGeometry&) = default;
};

// k stacked grayscale frames, oldest first.
struct ObservationState {
    FrameGeometry geometry;
    std::vector<std::uint8_t> pixels;

    const std::uint8_t* frame(int i) const { return pixels.data() + geometry.frame_bytes() * i; }
    friend bool operator==(const ObservationState&, const ObservationState&) = default;
};

struct StepResult {
    ObservationState state;
    bool done = false;
    bool success = false;
    // Evaluation-only signal: 1 on reaching the goal, else 0.
    double env_reward = 0.0;
};

// Ground-truth layout; visible to scripted experts and tests only.
struct GridLayout {
    Cell agent;
    Cell goal;
    int wall_col = -1;  // corridor only
    int gap_row = -1;

    bool blocked(Cell c, int grid) const;
};

int manhattan(Cell a, Cell b);

Action scripted_expert_action(const GridLayout& layout, int grid);
// The greedy move on an empty grid: larger gap first, ties horizontal.
Action greedy_action(Cell agent, Cell target);

class GridEnv {
   public:
    explicit GridEnv(EnvConfig config);

    ObservationState reset(std::uint64_t seed);
    StepResult step(Action action);

    const EnvConfig& config() const { return config_; }
    FrameGeometry geometry() const;
    const GridLayout& layout() const { return layout_; }
    int steps_taken() const { return steps_; }
    bool done() const { return done_; }

    // Places the agent and goal explicitly (tests, exhaustive checks).
    ObservationState reset_to(const GridLayout& layout);
    std::vector<std::uint8_t> render() const;

   private:
    ObservationState initial_state();

    EnvConfig config_;
    GridLayout layout_;
    std::vector<std::uint8_t> stack_;
    int steps_ = 0;
    bool done_ = true;
};

inline constexpr std::uint8_t kAgentIntensity = 255;
inline constexpr std::uint8_t kGoalIntensity = 128;
inline constexpr std::uint8_t kWallIntensity = 64;

}  // namespace stg::env
