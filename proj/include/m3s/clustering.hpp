#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "m3s/common.hpp"

namespace m3s {

inline constexpr int kNoise = -1;

struct ClusterAssignment {
  std::vector<int> labels;  // cluster id per point, or kNoise
  std::vector<bool> core;
  int cluster_count = 0;
  double eps = 0.0;
  std::size_t min_pts = 0;

  std::size_t noise_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
  }
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> m(static_cast<std::size_t>(cluster_count));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] != kNoise) m[static_cast<std::size_t>(labels[i])].push_back(i);
    return m;
  }
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("distance between vectors of dimension " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

namespace detail {
inline void check_points(std::span<const Vec> points) {
  if (points.empty()) throw ConfigError("clustering needs at least one point");
  const std::size_t dim = points.front().size();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != dim) throw DimensionError("point " + std::to_string(i) + " has a different dimension");
    if (!all_finite(points[i])) throw DataError("point " + std::to_string(i) + " is not finite");
  }
}
}  // namespace detail

// DBSCAN with Euclidean distance. A point is core when at least min_pts points
// (itself included) lie within eps. Clusters are seeded in ascending index
// order and expanded breadth-first, so a border point reachable from several
// clusters joins the one seeded first.
inline ClusterAssignment dbscan(std::span<const Vec> points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("dbscan: eps must be positive and finite");
  if (min_pts < 1) throw ConfigError("dbscan: min_pts must be >= 1");
  detail::check_points(points);

  const std::size_t n = points.size();
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    neighbors[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j)
      if (squared_distance(points[i], points[j]) <= eps2) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
  }
  for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());

  ClusterAssignment out;
  out.eps = eps;
  out.min_pts = min_pts;
  out.labels.assign(n, kNoise);
  out.core.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) out.core[i] = neighbors[i].size() >= min_pts;

  std::vector<bool> assigned(n, false);
  std::deque<std::size_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (assigned[seed] || !out.core[seed]) continue;
    const int cid = out.cluster_count++;
    assigned[seed] = true;
    out.labels[seed] = cid;
    frontier.push_back(seed);
    while (!frontier.empty()) {
      const std::size_t p = frontier.front();
      frontier.pop_front();
      if (!out.core[p]) continue;
      for (std::size_t q : neighbors[p]) {
        if (assigned[q]) continue;
        assigned[q] = true;
        out.labels[q] = cid;
        frontier.push_back(q);
      }
    }
  }
  return out;
}

// Knee heuristic: the 90th percentile of every point's distance to its
// min_pts-th nearest other point.
inline double suggest_eps(std::span<const Vec> points, std::size_t min_pts, double quantile = 0.9) {
  if (min_pts < 1) throw ConfigError("suggest_eps: min_pts must be >= 1");
  if (!(quantile > 0.0 && quantile <= 1.0)) throw ConfigError("suggest_eps: quantile must lie in (0, 1]");
  if (points.size() <= min_pts)
    throw ConfigError("suggest_eps: need more than " + std::to_string(min_pts) + " points, got " +
                      std::to_string(points.size()));
  detail::check_points(points);
  const std::size_t n = points.size();
  std::vector<double> kdist(n);
  std::vector<double> d2(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t k = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d2[k++] = squared_distance(points[i], points[j]);
    std::nth_element(d2.begin(), d2.begin() + static_cast<std::ptrdiff_t>(min_pts - 1), d2.end());
    kdist[i] = std::sqrt(d2[min_pts - 1]);
  }
  std::sort(kdist.begin(), kdist.end());
  const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(n)));
  return kdist[std::max<std::size_t>(rank, 1) - 1];
}

inline std::size_t default_min_pts(std::size_t n) {
  const auto lg = n <= 1 ? std::size_t{0} : static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n))));
  return std::max<std::size_t>(4, lg);
}

}  // namespace m3s
