#pragma once

#include <cstdint>
#include <vector>

#include "pcx/points.hpp"

namespace pcx {

struct KMeansResult {
  Points centroids;
  std::vector<std::size_t> labels;
  std::size_t iterations = 0;
  bool converged = false;
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below `tolerance` or `max_iterations` is reached. Empty
/// clusters are reseeded to the point farthest from its centroid.
KMeansResult kmeans(const Points& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations = 300,
                    double tolerance = 1e-8);

/// Index of the nearest centroid (squared Euclidean, lowest index on ties).
std::size_t nearest_centroid(const Points& centroids, const Vector& v);

double squared_distance(const Vector& a, const Vector& b);

}  // namespace pcx
