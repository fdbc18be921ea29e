// SPDX-License-Identifier: Apache-2.0
#include "stg/env/grid_env.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

namespace stg::env {

std::string to_string(Task task) { return task == Task::Chase ? "chase" : "corridor"; }

Task task_from_string(const std::string& name) {
    if (name == "chase") return Task::Chase;
    if (name == "corridor") return Task::Corridor;
    throw std::invalid_argument("unknown task: " + name);
}

std::string to_string(Action action) {
    static constexpr const char* names[] = {"up", "down", "left", "right", "stay"};
    return names[static_cast<int>(action)];
}

std::string EnvConfig::fingerprint() const {
    return to_string(task) + "-g" + std::to_string(grid) + "-s" + std::to_string(scale) + "-k" +
           std::to_string(frame_stack) + "-h" + std::to_string(horizon);
}

void EnvConfig::validate() const {
    if (grid < 4) throw std::invalid_argument("grid size must be >= 4");
    if (horizon < 8) throw std::invalid_argument("horizon must be >= 8");
    if (scale < 1) throw std::invalid_argument("render scale must be >= 1");
    if (frame_stack < 1) throw std::invalid_argument("frame stack must be >= 1");
}

int manhattan(Cell a, Cell b) { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

bool GridLayout::blocked(Cell c, int grid) const {
    if (c.row < 0 || c.col < 0 || c.row >= grid || c.col >= grid) return true;
    return wall_col >= 0 && c.col == wall_col && c.row != gap_row;
}

Action greedy_action(Cell agent, Cell target) {
    const int dr = target.row - agent.row;
    const int dc = target.col - agent.col;
    if (dr == 0 && dc == 0) return Action::Stay;
    if (std::abs(dr) > std::abs(dc)) return dr > 0 ? Action::Down : Action::Up;
    return dc > 0 ? Action::Right : Action::Left;
}

Action scripted_expert_action(const GridLayout& layout, int /*grid*/) {
    if (layout.wall_col < 0) return greedy_action(layout.agent, layout.goal);
    // Corridor: approach the gap from the left, pass through, then head for the goal.
    const Cell before{layout.gap_row, layout.wall_col - 1};
    const Cell after{layout.gap_row, layout.wall_col + 1};
    if (layout.agent.col < layout.wall_col) {
        if (layout.agent == before) return Action::Right;
        return greedy_action(layout.agent, before);
    }
    if (layout.agent.col == layout.wall_col) return greedy_action(layout.agent, after);
    return greedy_action(layout.agent, layout.goal);
}

GridEnv::GridEnv(EnvConfig config) : config_(config) { config_.validate(); }

FrameGeometry GridEnv::geometry() const {
    return {config_.frame_height(), config_.frame_width(), config_.frame_stack};
}

std::vector<std::uint8_t> GridEnv::render() const {
    const int g = config_.grid, s = config_.scale, w = g * s;
    std::vector<std::uint8_t> frame(static_cast<std::size_t>(w) * w, 0);
    auto paint = [&](Cell c, std::uint8_t v) {
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) frame[(c.row * s + y) * w + c.col * s + x] = v;
    };
    if (layout_.wall_col >= 0)
        for (int r = 0; r < g; ++r)
            if (r != layout_.gap_row) paint({r, layout_.wall_col}, kWallIntensity);
    paint(layout_.goal, kGoalIntensity);
    paint(layout_.agent, kAgentIntensity);
    return frame;
}

ObservationState GridEnv::initial_state() {
    const auto frame = render();
    stack_.clear();
    for (int i = 0; i < config_.frame_stack; ++i) stack_.insert(stack_.end(), frame.begin(), frame.end());
    steps_ = 0;
    done_ = false;
    return {geometry(), stack_};
}

ObservationState GridEnv::reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int g = config_.grid;
    std::uniform_int_distribution<int> cell(0, g - 1);
    GridLayout layout;
    if (config_.task == Task::Chase) {
        // Start at least G/2 cells (Manhattan) from the goal.
        do {
            layout.agent = {cell(rng), cell(rng)};
            layout.goal = {cell(rng), cell(rng)};
        } while (manhattan(layout.agent, layout.goal) < g / 2);
    } else {
        layout.wall_col = g / 2;
        layout.gap_row = cell(rng);
        std::uniform_int_distribution<int> left(0, layout.wall_col - 1);
        std::uniform_int_distribution<int> right(layout.wall_col + 1, g - 1);
        layout.agent = {cell(rng), left(rng)};
        layout.goal = {cell(rng), right(rng)};
    }
    return reset_to(layout);
}

ObservationState GridEnv::reset_to(const GridLayout& layout) {
    if (layout.blocked(layout.agent, config_.grid) || layout.blocked(layout.goal, config_.grid) ||
        layout.agent == layout.goal)
        throw std::invalid_argument("invalid layout");
    layout_ = layout;
    return initial_state();
}

StepResult GridEnv::step(Action action) {
    if (done_) throw std::logic_error("step called on a finished episode; reset first");
    Cell next = layout_.agent;
    switch (action) {
        case Action::Up: --next.row; break;
        case Action::Down: ++next.row; break;
        case Action::Left: --next.col; break;
        case Action::Right: ++next.col; break;
        case Action::Stay: break;
    }
    if (!layout_.blocked(next, config_.grid)) layout_.agent = next;
    ++steps_;

    const auto frame = render();
    const std::size_t fb = frame.size();
    std::move(stack_.begin() + static_cast<std::ptrdiff_t>(fb), stack_.end(), stack_.begin());
    std::copy(frame.begin(), frame.end(), stack_.end() - static_cast<std::ptrdiff_t>(fb));

    StepResult r;
    r.success = layout_.agent == layout_.goal;
    r.done = r.success || steps_ >= config_.horizon;
    r.env_reward = r.success ? 1.0 : 0.0;
    r.state = {geometry(), stack_};
    done_ = r.done;
    return r;
}

}  // namespace stg::env
