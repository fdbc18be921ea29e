// SPDX-License-Identifier: Apache-2.0
#pragma once

// Learning-curve plots: one PNG per metric, each group drawn as its seed
// mean with a +-1 standard deviation band (no band for a single seed).

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace stg::analysis {

class CsvError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct CurveTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t column(const std::string& name) const;  // throws if absent
    bool has(const std::string& name) const;
};

// Headered, comma-separated numeric table. Errors name the file and line;
// a file without data rows raises "no data".
CurveTable parse_curve_csv(const std::string& text, const std::string& source);
CurveTable read_curve_csv(const std::filesystem::path& path);

struct Band {
    std::vector<double> x;
    std::vector<double> mean;
    std::vector<double> stddev;  // population std across seeds; zeros for one seed
    std::size_t seeds = 0;
};

// Aligns seeds by row (truncating to the shortest) and takes x from the first.
Band aggregate(const std::vector<CurveTable>& seeds, const std::string& x_column, const std::string& y_column);

struct CurveGroup {
    std::string label;
    std::vector<std::filesystem::path> csvs;  // one per seed
};

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 255) {}
    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
    std::array<std::uint8_t, 3> get(int x, int y) const;
};

void write_png(const Image& image, const std::filesystem::path& path);

// Picks "env_steps", "step" or "update" as the x axis (else the first
// column); every other column becomes <out_prefix>_<metric>.png.
std::vector<std::filesystem::path> plot_curves(const std::vector<CurveGroup>& groups,
                                               const std::filesystem::path& out_prefix);

// Renders one metric (exposed for tests).
Image render_plot(const std::vector<std::pair<std::string, Band>>& series, const std::string& title);

}  // namespace stg::analysis
