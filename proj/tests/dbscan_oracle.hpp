#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "m3s/clustering.hpp"

namespace oracle {

using m3s::kNoise;
using m3s::Vec;

// Independent reference: core points joined by union-find, components numbered
// by their smallest core index, border points given to the lowest-numbered
// component among their core neighbours.
inline std::vector<int> brute_force_dbscan(const std::vector<Vec>& pts, double eps, std::size_t min_pts) {
  const std::size_t n = pts.size();
  auto near = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < pts[i].size(); ++k) s += (pts[i][k] - pts[j][k]) * (pts[i][k] - pts[j][k]);
    return std::sqrt(s) <= eps;
  };
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j) c += near(i, j) ? 1 : 0;
    core[i] = c >= min_pts;
  }
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (core[i] && core[j] && near(i, j)) parent[find(i)] = find(j);

  std::vector<int> label(n, kNoise);
  std::vector<int> root_id(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    auto r = find(i);
    if (root_id[r] < 0) root_id[r] = next++;
    label[i] = root_id[r];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    int best = std::numeric_limits<int>::max();
    for (std::size_t j = 0; j < n; ++j)
      if (core[j] && near(i, j)) best = std::min(best, label[j]);
    if (best != std::numeric_limits<int>::max()) label[i] = best;
  }
  return label;
}

// Same partition up to cluster relabelling.
inline bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) {
      if ((a[i] == kNoise) != (b[i] == kNoise)) return false;
      if (a[i] != kNoise && a[j] != kNoise && ((a[i] == a[j]) != (b[i] == b[j]))) return false;
    }
  return true;
}

}  // namespace oracle
