// SPDX-License-Identifier: Apache-2.0
#include "stg/analysis/plot.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace stg::analysis {

// --- CSV -----------------------------------------------------------------------

std::size_t CurveTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return i;
    throw CsvError("no column named '" + name + "'");
}

bool CurveTable::has(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

CurveTable parse_curve_csv(const std::string& text, const std::string& source) {
    CurveTable t;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto cells = split(line);
        if (t.columns.empty()) {
            for (auto& c : cells)
                if (c.empty()) throw CsvError(source + ":" + std::to_string(lineno) + ": empty column name");
            t.columns = std::move(cells);
            continue;
        }
        if (cells.size() != t.columns.size())
            throw CsvError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                           " fields, found " + std::to_string(cells.size()));
        std::vector<double> row;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            char* end = nullptr;
            const double v = std::strtod(cells[c].c_str(), &end);
            if (cells[c].empty() || end != cells[c].c_str() + cells[c].size())
                throw CsvError(source + ":" + std::to_string(lineno) + ": non-numeric value '" + cells[c] +
                               "' in column '" + t.columns[c] + "'");
            row.push_back(v);
        }
        t.rows.push_back(std::move(row));
    }
    if (t.rows.empty()) throw CsvError(source + ": no data");
    return t;
}

CurveTable read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CsvError(path.string() + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_curve_csv(ss.str(), path.string());
}

Band aggregate(const std::vector<CurveTable>& seeds, const std::string& x_column, const std::string& y_column) {
    if (seeds.empty()) throw CsvError("aggregate: no runs");
    std::size_t rows = seeds.front().rows.size();
    for (const auto& s : seeds) rows = std::min(rows, s.rows.size());
    Band b;
    b.seeds = seeds.size();
    const std::size_t xc = seeds.front().column(x_column);
    for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0, sq = 0;
        for (const auto& s : seeds) {
            const double v = s.rows[r][s.column(y_column)];
            sum += v;
            sq += v * v;
        }
        const double n = static_cast<double>(seeds.size());
        const double mean = sum / n;
        b.x.push_back(seeds.front().rows[r][xc]);
        b.mean.push_back(mean);
        b.stddev.push_back(seeds.size() > 1 ? std::sqrt(std::max(0.0, sq / n - mean * mean)) : 0.0);
    }
    return b;
}

// --- raster --------------------------------------------------------------------

void Image::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
}

std::array<std::uint8_t, 3> Image::get(int x, int y) const {
    const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    return {rgb[i], rgb[i + 1], rgb[i + 2]};
}

void write_png(const Image& image, const std::filesystem::path& path) {
    FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw std::runtime_error(path.string() + ": cannot open for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(f);
        throw std::runtime_error(path.string() + ": PNG encoding failed");
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
}

namespace {

using Color = std::array<std::uint8_t, 3>;
constexpr Color kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}};
constexpr Color kInk = {40, 40, 40};
constexpr Color kGrid = {225, 225, 225};

// 3x5 glyphs, one row per 3 bits, top row in the high bits.
std::uint16_t glyph(char c) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
    static const std::uint16_t digits[] = {075557, 026227, 071747, 071717, 055711, 074717, 074757, 071111, 075757, 075717};
    static const std::uint16_t letters[] = {025755, 065656, 034443, 065556, 074647, 074644, 034553, 055755, 072227,
                                            011152, 055655, 044447, 057755, 065555, 025552, 065644, 025563, 065655,
                                            034216, 072222, 055557, 055552, 055775, 055255, 055222, 071247};
    if (c >= '0' && c <= '9') return digits[c - '0'];
    if (c >= 'A' && c <= 'Z') return letters[c - 'A'];
    switch (c) {
        case '.': return 000002;
        case '-': return 000700;
        case '_': return 000007;
        case '+': return 002720;
        case ':': return 002020;
        case '=': return 007070;
        case '(': return 012221;
        case ')': return 042224;
        case '/': return 011244;
        case ',': return 000024;
        default: return 0;
    }
}

void draw_text(Image& img, int x, int y, const std::string& s, Color c, int scale = 2) {
    for (char ch : s) {
        const std::uint16_t g = glyph(ch);
        for (int row = 0; row < 5; ++row)
            for (int col = 0; col < 3; ++col)
                if (g >> ((4 - row) * 3 + (2 - col)) & 1)
                    for (int dy = 0; dy < scale; ++dy)
                        for (int dx = 0; dx < scale; ++dx)
                            img.set(x + col * scale + dx, y + row * scale + dy, c[0], c[1], c[2]);
        x += 4 * scale;
    }
}

int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale; }

void draw_line(Image& img, double x0, double y0, double x1, double y1, Color c, int thick = 2) {
    const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
        const double t = static_cast<double>(i) / steps;
        const int x = static_cast<int>(std::lround(x0 + (x1 - x0) * t));
        const int y = static_cast<int>(std::lround(y0 + (y1 - y0) * t));
        for (int dy = 0; dy < thick; ++dy)
            for (int dx = 0; dx < thick; ++dx) img.set(x + dx, y + dy, c[0], c[1], c[2]);
    }
}

Color tint(Color c, double alpha) {
    Color out;
    for (int i = 0; i < 3; ++i) out[i] = static_cast<std::uint8_t>(std::lround(255 * (1 - alpha) + c[i] * alpha));
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

}  // namespace

Image render_plot(const std::vector<std::pair<std::string, Band>>& series, const std::string& title) {
    constexpr int W = 640, H = 400, L = 70, R = 20, T = 36, B = 40;
    Image img(W, H);
    double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& [label, band] : series)
        for (std::size_t i = 0; i < band.x.size(); ++i) {
            xmin = std::min(xmin, band.x[i]);
            xmax = std::max(xmax, band.x[i]);
            ymin = std::min(ymin, band.mean[i] - band.stddev[i]);
            ymax = std::max(ymax, band.mean[i] + band.stddev[i]);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) ymin -= 0.5, ymax += 0.5;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

    for (int k = 0; k <= 4; ++k) {
        const double gy = py(ymin + (ymax - ymin) * k / 4.0);
        draw_line(img, L, gy, W - R, gy, kGrid, 1);
    }
    // Bands first, then means on top.
    for (std::size_t s = 0; s < series.size(); ++s) {
        const Band& b = series[s].second;
        if (b.seeds < 2 || b.x.size() < 2) continue;
        const Color c = tint(kPalette[s % 5], 0.25);
        for (std::size_t i = 0; i + 1 < b.x.size(); ++i) {
            const int xa = static_cast<int>(std::lround(px(b.x[i]))), xb = static_cast<int>(std::lround(px(b.x[i + 1])));
            for (int x = xa; x <= xb; ++x) {
                const double t = xb == xa ? 0.0 : static_cast<double>(x - xa) / (xb - xa);
                const double m = b.mean[i] + (b.mean[i + 1] - b.mean[i]) * t;
                const double sd = b.stddev[i] + (b.stddev[i + 1] - b.stddev[i]) * t;
                const int y0 = static_cast<int>(std::lround(py(m + sd))), y1 = static_cast<int>(std::lround(py(m - sd)));
                for (int y = y0; y <= y1; ++y) img.set(x, y, c[0], c[1], c[2]);
            }
        }
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
        const Band& b = series[s].second;
        const Color c = kPalette[s % 5];
        for (std::size_t i = 0; i + 1 < b.x.size(); ++i)
            draw_line(img, px(b.x[i]), py(b.mean[i]), px(b.x[i + 1]), py(b.mean[i + 1]), c);
        if (b.x.size() == 1) draw_line(img, px(b.x[0]) - 2, py(b.mean[0]), px(b.x[0]) + 2, py(b.mean[0]), c, 3);
    }
    draw_line(img, L, T, L, H - B, kInk, 1);
    draw_line(img, L, H - B, W - R, H - B, kInk, 1);
    draw_line(img, L, T, W - R, T, kInk, 1);
    draw_line(img, W - R, T, W - R, H - B, kInk, 1);
    draw_text(img, (W - text_width(title)) / 2, 10, title, kInk);
    draw_text(img, L - 6 - text_width(fmt(ymax)), T, fmt(ymax), kInk);
    draw_text(img, L - 6 - text_width(fmt(ymin)), H - B - 10, fmt(ymin), kInk);
    draw_text(img, L, H - B + 8, fmt(xmin), kInk);
    draw_text(img, W - R - text_width(fmt(xmax)), H - B + 8, fmt(xmax), kInk);
    int ly = T + 8;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const Color c = kPalette[s % 5];
        const int lx = W - R - 12 - text_width(series[s].first) - 16;
        for (int dy = 0; dy < 8; ++dy)
            for (int dx = 0; dx < 10; ++dx) img.set(lx + dx, ly + dy, c[0], c[1], c[2]);
        draw_text(img, lx + 16, ly - 1, series[s].first, kInk);
        ly += 16;
    }
    return img;
}

std::vector<std::filesystem::path> plot_curves(const std::vector<CurveGroup>& groups,
                                               const std::filesystem::path& out_prefix) {
    if (groups.empty()) throw CsvError("plot: no input curves");
    std::vector<std::vector<CurveTable>> tables;
    for (const auto& g : groups) {
        if (g.csvs.empty()) throw CsvError("plot: group '" + g.label + "' has no CSV files");
        std::vector<CurveTable> seeds;
        for (const auto& p : g.csvs) seeds.push_back(read_curve_csv(p));
        for (const auto& s : seeds)
            if (s.columns != seeds.front().columns)
                throw CsvError("plot: runs in group '" + g.label + "' have different columns");
        tables.push_back(std::move(seeds));
    }
    const CurveTable& first = tables.front().front();
    std::string x = first.columns.front();
    for (const char* cand : {"env_steps", "step", "update"})
        if (first.has(cand)) {
            x = cand;
            break;
        }
    std::vector<std::filesystem::path> written;
    if (out_prefix.has_parent_path()) std::filesystem::create_directories(out_prefix.parent_path());
    for (const auto& metric : first.columns) {
        if (metric == x || metric == "step" || metric == "update" || metric == "env_steps") continue;
        std::vector<std::pair<std::string, Band>> series;
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (!tables[g].front().has(metric) || !tables[g].front().has(x)) continue;
            series.emplace_back(groups[g].label, aggregate(tables[g], x, metric));
        }
        const auto path = std::filesystem::path(out_prefix.string() + "_" + metric + ".png");
        write_png(render_plot(series, metric + " vs " + x), path);
        written.push_back(path);
    }
    return written;
}

}  // namespace stg::analysis
