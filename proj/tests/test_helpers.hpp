#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "core/geometry.hpp"
#include "core/rng.hpp"

namespace scpc::testing {

using geometry::PointCloud;
using geometry::Vec3;

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed,
                               double extent = 1.0) {
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    cloud.points.push_back({rng.uniform(-extent, extent),
                            rng.uniform(-extent, extent),
                            rng.uniform(-extent, extent)});
  }
  return cloud;
}

// Exhaustive (distance, index) sort; the reference for every kNN path.
inline std::vector<std::size_t> knn_oracle(const PointCloud& cloud,
                                           std::size_t query, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (i == query) continue;
    order.emplace_back(
        geometry::squared_distance(cloud.points[i], cloud.points[query]), i);
  }
  std::sort(order.begin(), order.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(order[i].second);
  return out;
}

// Max-min-distance reference for farthest point sampling, given the first
// center. Every step recomputes each candidate's distance to the chosen set
// from scratch, independent of the incremental implementation.
inline std::vector<std::size_t> fps_oracle(const PointCloud& cloud,
                                           std::size_t m, std::size_t first) {
  std::vector<std::size_t> centers = {first};
  while (centers.size() < m) {
    std::size_t best = cloud.size();
    double best_min = -1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (std::find(centers.begin(), centers.end(), i) != centers.end())
        continue;
      double min_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t c : centers) {
        min_d2 = std::min(min_d2, geometry::squared_distance(cloud.points[i],
                                                             cloud.points[c]));
      }
      if (min_d2 > best_min) {
        best_min = min_d2;
        best = i;
      }
    }
    centers.push_back(best);
  }
  return centers;
}

}  // namespace scpc::testing
