// SPDX-License-Identifier: Apache-2.0
#include "stg/analysis/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "stg/io/binary.hpp"

namespace stg::analysis {

namespace {

double row_distance(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
    const std::size_t d = a.shape[1];
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) {
        const double x = a[i * d + c] - b[j * d + c];
        s += x * x;
    }
    return std::sqrt(s);
}

Tensor<float> rows_f(const Tensor<float>& t, std::size_t begin, std::size_t end) {
    const std::size_t d = t.shape.at(1);
    Tensor<float> out({end - begin, d});
    std::copy(t.data.begin() + static_cast<std::ptrdiff_t>(begin * d),
              t.data.begin() + static_cast<std::ptrdiff_t>(end * d), out.data.begin());
    return out;
}

std::vector<Tensor<float>> encode_trajectories(const env::ExpertDataset& ds, const models::ModelBundle<float>& b) {
    if (!(ds.geometry == b.config.frame))
        throw io::FormatError(io::FormatError::Kind::Geometry,
                              "dataset " + ds.fingerprint + " does not match the bundle's frame geometry");
    std::vector<Tensor<float>> out;
    for (std::size_t t = 0; t < ds.trajectories.size(); ++t) {
        std::vector<env::ObservationState> states;
        for (std::size_t i = 0; i < ds.trajectories[t].length(); ++i) states.push_back(ds.state(t, i));
        out.push_back(models::encode(b, states));
    }
    return out;
}

}  // namespace

TrajectoryEmbeddings embed_dataset(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle) {
    TrajectoryEmbeddings out;
    for (const auto& e : encode_trajectories(dataset, bundle)) {
        Tensor<double> t(e.shape);
        for (std::size_t i = 0; i < e.size(); ++i) t[i] = e[i];
        out.push_back(std::move(t));
    }
    return out;
}

ContinuityReport embedding_continuity(const TrajectoryEmbeddings& emb, std::size_t random_samples,
                                      std::uint64_t seed) {
    if (random_samples < 1000) throw std::invalid_argument("continuity: at least 1000 random pairs are required");
    if (emb.empty()) throw std::invalid_argument("continuity: no trajectories");
    ContinuityReport r;
    std::vector<std::pair<std::size_t, std::size_t>> index;
    double adj_sum = 0;
    std::size_t adj_count = 0;
    for (std::size_t t = 0; t < emb.size(); ++t) {
        const std::size_t len = emb[t].shape.at(0);
        double s = 0;
        for (std::size_t i = 0; i + 1 < len; ++i) s += row_distance(emb[t], i, emb[t], i + 1);
        r.per_trajectory.push_back(len > 1 ? s / static_cast<double>(len - 1) : 0.0);
        adj_sum += s;
        adj_count += len > 0 ? len - 1 : 0;
        for (std::size_t i = 0; i < len; ++i) index.emplace_back(t, i);
    }
    if (index.empty()) throw std::invalid_argument("continuity: no states");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, index.size() - 1);
    double rnd = 0;
    for (std::size_t k = 0; k < random_samples; ++k) {
        const auto a = index[pick(rng)], b = index[pick(rng)];
        rnd += row_distance(emb[a.first], a.second, emb[b.first], b.second);
    }
    r.random_samples = random_samples;
    r.adjacent_mean = adj_count ? adj_sum / static_cast<double>(adj_count) : 0.0;
    r.random_mean = rnd / static_cast<double>(random_samples);
    r.degenerate = r.random_mean == 0.0;
    r.ratio = r.degenerate ? 0.0 : r.adjacent_mean / r.random_mean;
    return r;
}

ContinuityReport embedding_continuity(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle,
                                      std::size_t random_samples, std::uint64_t seed) {
    return embedding_continuity(embed_dataset(dataset, bundle), random_samples, seed);
}

// --- PCA ---------------------------------------------------------------------

namespace {

// Symmetric eigendecomposition by cyclic Jacobi rotations. a is overwritten;
// returns eigenvalues and column eigenvectors in v.
std::vector<double> jacobi_eigen(std::vector<double>& a, std::size_t n, std::vector<double>& v) {
    v.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0, total = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                total += a[i * n + j] * a[i * n + j];
                if (i != j) off += a[i * n + j] * a[i * n + j];
            }
        if (off <= 1e-24 * std::max(total, 1e-300)) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p], akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k], aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v[k * n + p], vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    std::vector<double> eig(n);
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
    return eig;
}

}  // namespace

Projection pca(const Tensor<double>& x, std::size_t dims) {
    if (x.rank() != 2) throw num::ShapeError("pca: expected (N, d) data");
    const std::size_t n = x.shape[0], d = x.shape[1];
    if (dims == 0 || dims > d) throw std::invalid_argument("pca: dims must be in [1, d]");
    if (n < dims) throw std::invalid_argument("pca: fewer samples than projection dimensions");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) mean[c] += x[i * d + c];
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            const double xa = x[i * d + a] - mean[a];
            for (std::size_t b = a; b < d; ++b) cov[a * d + b] += xa * (x[i * d + b] - mean[b]);
        }
    for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov[b * d + a] = cov[a * d + b] /= static_cast<double>(n);

    std::vector<double> vecs;
    auto eig = jacobi_eigen(cov, d, vecs);
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eig[a] > eig[b]; });
    double trace = 0;
    for (double& e : eig) trace += (e = std::max(e, 0.0));

    Projection p;
    p.components = Tensor<double>({dims, d});
    p.coordinates = Tensor<double>({n, dims});
    for (std::size_t k = 0; k < dims; ++k) {
        const std::size_t col = order[k];
        double sign = 1.0;
        for (std::size_t c = 0; c < d; ++c)
            if (std::abs(vecs[c * d + col]) > 1e-12) {
                sign = vecs[c * d + col] > 0 ? 1.0 : -1.0;
                break;
            }
        for (std::size_t c = 0; c < d; ++c) p.components[k * d + c] = sign * vecs[c * d + col];
        p.explained_variance.push_back(trace > 0 ? eig[col] / trace : 0.0);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dims; ++k) {
            double s = 0;
            for (std::size_t c = 0; c < d; ++c) s += (x[i * d + c] - mean[c]) * p.components[k * d + c];
            p.coordinates[i * dims + k] = s;
        }
    return p;
}

std::string projection_csv(const Projection& p, const std::vector<std::pair<std::size_t, std::size_t>>& ids) {
    const std::size_t n = p.coordinates.shape.at(0), dims = p.coordinates.shape.at(1);
    if (ids.size() != n) throw std::invalid_argument("projection_csv: one id per row is required");
    std::string out = "trajectory,timestep";
    for (std::size_t k = 0; k < dims; ++k) out += ",pc" + std::to_string(k + 1);
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
        out += std::to_string(ids[i].first) + "," + std::to_string(ids[i].second);
        for (std::size_t k = 0; k < dims; ++k) {
            std::snprintf(buf, sizeof buf, ",%.9g", p.coordinates[i * dims + k]);
            out += buf;
        }
        out += "\n";
    }
    return out;
}

// --- critic histogram ----------------------------------------------------------

double ScoreHistogram::mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double ScoreHistogram::stddev(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

void fill_bins(ScoreHistogram& h, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("histogram: bins must be >= 1");
    double lo = INFINITY, hi = -INFINITY;
    for (const auto* v : {&h.expert, &h.predicted, &h.shuffled})
        for (double x : *v) {
            lo = std::min(lo, x);
            hi = std::max(hi, x);
        }
    if (!std::isfinite(lo)) lo = hi = 0.0;
    if (hi <= lo) hi = lo + 1e-12;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    auto count = [&](const std::vector<double>& v) {
        std::vector<std::size_t> c(bins, 0);
        for (double x : v) {
            auto b = static_cast<std::size_t>((x - lo) / (hi - lo) * static_cast<double>(bins));
            ++c[std::min(b, bins - 1)];
        }
        return c;
    };
    h.expert_counts = count(h.expert);
    h.predicted_counts = count(h.predicted);
    h.shuffled_counts = count(h.shuffled);
}

ScoreHistogram critic_histogram(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle,
                                std::size_t shuffles, std::size_t context, std::size_t bins, std::uint64_t seed) {
    if (context == 0 || context > bundle.config.block_size)
        throw std::invalid_argument("histogram: context must be in [1, block_size]");
    const auto emb = encode_trajectories(dataset, bundle);
    const std::size_t d = bundle.config.embed_dim;
    std::mt19937_64 rng(seed);
    ScoreHistogram h;
    for (const auto& e : emb) {
        const std::size_t len = e.shape[0];
        if (len < 2) continue;
        const std::size_t n = len - 1;
        Tensor<float> predicted({n, d});
        if (context == 1) {
            predicted = models::predict_next(bundle, rows_f(e, 0, n), 1);
        } else {
            for (std::size_t t = 0; t < n; ++t) {
                const std::size_t s0 = t + 1 >= context ? t + 1 - context : 0;
                const auto p = models::predict_next(bundle, rows_f(e, s0, t + 1), t + 1 - s0);
                std::copy(p.data.end() - static_cast<std::ptrdiff_t>(d), p.data.end(),
                          predicted.data.begin() + static_cast<std::ptrdiff_t>(t * d));
            }
        }
        const auto from = rows_f(e, 0, n);
        for (float s : models::critic_scores(bundle, from, rows_f(e, 1, len))) h.expert.push_back(s);
        for (float s : models::critic_scores(bundle, from, predicted)) h.predicted.push_back(s);

        std::vector<std::size_t> src, dst;
        for (std::size_t t = 0; t < n; ++t) {
            std::vector<std::size_t> far;
            for (std::size_t k = 0; k < len; ++k)
                if ((k > t ? k - t : t - k) > kShuffleMinGap) far.push_back(k);
            if (far.empty()) continue;
            std::uniform_int_distribution<std::size_t> pick(0, far.size() - 1);
            for (std::size_t s = 0; s < shuffles; ++s) {
                src.push_back(t);
                dst.push_back(far[pick(rng)]);
            }
        }
        if (src.empty()) continue;
        Tensor<float> a({src.size(), d}), b({src.size(), d});
        for (std::size_t i = 0; i < src.size(); ++i) {
            std::copy_n(e.data.begin() + static_cast<std::ptrdiff_t>(src[i] * d), d,
                        a.data.begin() + static_cast<std::ptrdiff_t>(i * d));
            std::copy_n(e.data.begin() + static_cast<std::ptrdiff_t>(dst[i] * d), d,
                        b.data.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        for (float s : models::critic_scores(bundle, a, b)) h.shuffled.push_back(s);
    }
    fill_bins(h, bins);
    return h;
}

std::string histogram_csv(const ScoreHistogram& h) {
    std::string out = "bin_low,bin_high,expert,predicted,shuffled\n";
    char buf[160];
    for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%zu,%zu,%zu\n", h.edges[b], h.edges[b + 1], h.expert_counts[b],
                      h.predicted_counts[b], h.shuffled_counts[b]);
        out += buf;
    }
    return out;
}

}  // namespace stg::analysis
