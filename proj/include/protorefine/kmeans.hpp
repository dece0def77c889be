#pragma once

#include <cstdint>
#include <vector>

#include "protorefine/types.hpp"

namespace protorefine {

struct KMeansResult {
    std::vector<double> centroids; // k x d row-major; each equals the mean of its assigned rows
    std::vector<int> assignments;  // one cluster index per input row
    double inertia = 0.0;          // sum of squared Euclidean distances to assigned centroids
    int iterations_run = 0;
    std::vector<double> inertia_history; // inertia after each Lloyd iteration (non-increasing)
};

// Lloyd's algorithm with k-means++ seeding, 5 restarts (lowest inertia kept),
// and farthest-point reseeding of empty clusters.  Stops when the maximum
// centroid shift is <= tol or after max_iters iterations.  Deterministic for
// a fixed seed; never returns an empty cluster.
KMeansResult kmeans_fit(const MatrixF& rows, int k, std::uint64_t seed, int max_iters, double tol);

} // namespace protorefine
