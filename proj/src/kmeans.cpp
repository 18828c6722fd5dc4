#include "pcx/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pcx/error.hpp"
#include "pcx/random.hpp"

namespace pcx {

double squared_distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_centroid(const Points& centroids, const Vector& v) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = squared_distance(centroids[c], v);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

namespace {

std::size_t count_distinct(const Points& points, std::size_t stop_at) {
  Points sorted = points;
  std::sort(sorted.begin(), sorted.end());
  std::size_t distinct = sorted.empty() ? 0 : 1;
  for (std::size_t i = 1; i < sorted.size() && distinct < stop_at; ++i)
    if (sorted[i] != sorted[i - 1]) ++distinct;
  return distinct;
}

Points seed_plus_plus(const Points& points, std::size_t k, Rng& rng) {
  Points centroids;
  centroids.push_back(points[uniform_index(rng, points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], centroids[0]);
  while (centroids.size() < k) {
    double total = 0.0;
    for (double d : d2) total += d;
    const double target = uniform01(rng) * total;
    std::size_t pick = points.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    // Rounding at the tail can land on an already chosen point; fall back to the farthest one.
    if (d2[pick] == 0.0) pick = static_cast<std::size_t>(std::max_element(d2.begin(), d2.end()) - d2.begin());
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const Points& points, std::size_t k, std::uint64_t seed, std::size_t max_iterations,
                    double tolerance) {
  if (k == 0) throw InputError("k-means needs k >= 1");
  if (points.size() < k)
    throw InputError("k-means needs at least k = " + std::to_string(k) + " samples, got " + std::to_string(points.size()));
  const std::size_t m = points.front().size();
  for (const auto& p : points)
    if (p.size() != m) throw InputError("k-means input has inconsistent dimensions");
  if (count_distinct(points, k) < k)
    throw InputError("k-means needs at least " + std::to_string(k) + " distinct points");

  Rng rng(seed);
  KMeansResult res;
  res.centroids = seed_plus_plus(points, k, rng);
  res.labels.assign(points.size(), 0);

  for (res.iterations = 1; res.iterations <= max_iterations; ++res.iterations) {
    for (std::size_t i = 0; i < points.size(); ++i) res.labels[i] = nearest_centroid(res.centroids, points[i]);

    Points sums(k, Vector(m, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[res.labels[i]];
      for (std::size_t d = 0; d < m; ++d) s[d] += points[i][d];
      ++counts[res.labels[i]];
    }
    std::vector<bool> taken(points.size(), false);
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      Vector next(m);
      if (counts[c] == 0) {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          const double d = squared_distance(points[i], res.centroids[res.labels[i]]);
          if (!taken[i] && d > far_d) {
            far_d = d;
            far = i;
          }
        }
        taken[far] = true;
        next = points[far];
      } else {
        for (std::size_t d = 0; d < m; ++d) next[d] = sums[c][d] / static_cast<double>(counts[c]);
      }
      shift = std::max(shift, std::sqrt(squared_distance(next, res.centroids[c])));
      res.centroids[c] = std::move(next);
    }
    if (shift < tolerance) {
      res.converged = true;
      break;
    }
  }
  res.iterations = std::min(res.iterations, max_iterations);
  for (std::size_t i = 0; i < points.size(); ++i) res.labels[i] = nearest_centroid(res.centroids, points[i]);
  return res;
}

}  // namespace pcx
