// SPDX-License-Identifier: Apache-2.0
#pragma once

// Post-hoc diagnostics for trained bundles: embedding continuity, PCA
// projections and critic score histograms.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stg/env/dataset.hpp"
#include "stg/models/bundle.hpp"

namespace stg::analysis {

using num::Tensor;

// One (length, d) tensor per trajectory.
using TrajectoryEmbeddings = std::vector<Tensor<double>>;

TrajectoryEmbeddings embed_dataset(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle);

struct ContinuityReport {
    double adjacent_mean = 0;  // mean ||e_t - e_{t+1}||
    double random_mean = 0;    // mean distance between uniformly drawn states
    double ratio = 0;          // adjacent / random; 0 when degenerate
    bool degenerate = false;   // random_mean == 0 (all embeddings identical)
    std::size_t random_samples = 0;
    std::vector<double> per_trajectory;  // adjacent mean per trajectory (0 for length-1)
};

// random_samples must be >= 1000. Deterministic given seed.
ContinuityReport embedding_continuity(const TrajectoryEmbeddings& embeddings, std::size_t random_samples = 2000,
                                      std::uint64_t seed = 0);
ContinuityReport embedding_continuity(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle,
                                      std::size_t random_samples = 2000, std::uint64_t seed = 0);

struct Projection {
    Tensor<double> coordinates;             // (N, dims)
    Tensor<double> components;              // (dims, d), unit rows
    std::vector<double> explained_variance;  // ratio per component, non-increasing
};

// PCA of the rows of x (N, d) via Jacobi eigendecomposition of the covariance.
// Each component's first nonzero loading is positive.
Projection pca(const Tensor<double>& x, std::size_t dims = 2);
// Rows: trajectory index, timestep, coordinates. A trailing comment-free
// header names the columns.
std::string projection_csv(const Projection& projection, const std::vector<std::pair<std::size_t, std::size_t>>& ids);

struct ScoreHistogram {
    std::vector<double> expert;     // D(e_t, e_{t+1})
    std::vector<double> predicted;  // D(e_t, T(context)_t)
    std::vector<double> shuffled;   // D(e_t, e_k), |k - t| > 5, same trajectory
    std::vector<double> edges;      // bins + 1 shared edges
    std::vector<std::size_t> expert_counts, predicted_counts, shuffled_counts;

    static double mean(const std::vector<double>& v);
    static double stddev(const std::vector<double>& v);
};

inline constexpr std::size_t kShuffleMinGap = 5;

// `shuffles` shuffled partners per transition (where any exist); predictions
// use the most recent `context` embeddings.
ScoreHistogram critic_histogram(const env::ExpertDataset& dataset, const models::ModelBundle<float>& bundle,
                                std::size_t shuffles = 4, std::size_t context = 1, std::size_t bins = 30,
                                std::uint64_t seed = 0);
// Bins the three score lists on shared edges spanning their union.
void fill_bins(ScoreHistogram& histogram, std::size_t bins);
std::string histogram_csv(const ScoreHistogram& histogram);

}  // namespace stg::analysis
