#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m3s/clustering.hpp"
#include "m3s/common.hpp"

namespace m3s {

inline Vec centroid(std::span<const Vec> vectors) {
  if (vectors.empty()) throw ConfigError("centroid of an empty set");
  const std::size_t dim = vectors.front().size();
  Vec c(dim, 0.0);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw DimensionError("centroid over vectors of differing dimension");
    for (std::size_t j = 0; j < dim; ++j) c[j] += v[j];
  }
  for (auto& x : c) x /= static_cast<double>(vectors.size());
  return c;
}

// Squared Euclidean distance between a cluster centroid and a class centroid.
inline double cluster_class_distance(std::span<const double> cluster_centroid, std::span<const double> class_centroid) {
  return squared_distance(cluster_centroid, class_centroid);
}

// Class index -> centroid of its labeled embeddings, in class-index order.
struct ClassCentroids {
  std::vector<int> classes;
  std::vector<Vec> centroids;
  std::vector<std::size_t> counts;

  std::size_t size() const { return classes.size(); }

  // Groups embeddings by label; classes with no samples are skipped.
  static ClassCentroids compute(std::span<const Vec> embeddings, std::span<const int> labels) {
    if (embeddings.size() != labels.size()) throw DimensionError("embeddings and labels differ in length");
    std::map<int, std::vector<Vec>> groups;
    for (std::size_t i = 0; i < embeddings.size(); ++i) groups[labels[i]].push_back(embeddings[i]);
    ClassCentroids out;
    for (auto& [cls, vs] : groups) {
      out.classes.push_back(cls);
      out.counts.push_back(vs.size());
      out.centroids.push_back(centroid(vs));
    }
    return out;
  }
};

struct AuxiliaryLabel {
  bool known = false;  // false: potential unknown
  int cls = -1;        // nearest class (meaningful when known)
  double distance = 0.0;

  static AuxiliaryLabel potential_unknown(int nearest, double d) { return {false, nearest, d}; }
  static AuxiliaryLabel known_class(int c, double d) { return {true, c, d}; }
  bool operator==(const AuxiliaryLabel&) const = default;
};

struct AlignConfig {
  // Squared-distance threshold; nullopt selects the adaptive threshold.
  std::optional<double> threshold;
  // Multiplier applied to the adaptive threshold.
  double adaptive_scale = 1.0;
  // Used when the adaptive rule is degenerate (fewer than two classes, or a
  // zero gap between centroids).
  double fallback_threshold = 1.0;

  void validate() const {
    if (threshold && !(*threshold > 0.0)) throw ConfigError("alignment threshold must be positive");
    if (!(fallback_threshold > 0.0)) throw ConfigError("fallback alignment threshold must be positive");
    if (!(adaptive_scale > 0.0)) throw ConfigError("adaptive threshold scale must be positive");
  }
};

// Nearest class centroid; ties go to the lower class index.
inline std::pair<int, double> nearest_class(std::span<const double> v, const ClassCentroids& cents) {
  if (cents.size() == 0) throw ConfigError("no class centroids to align against");
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < cents.size(); ++m) {
    const double d = cluster_class_distance(v, cents.centroids[m]);
    if (d < best_d || (d == best_d && cents.classes[m] < best)) {
      best_d = d;
      best = cents.classes[m];
    }
  }
  return {best, best_d};
}

inline AuxiliaryLabel align_one(std::span<const double> cluster_centroid, const ClassCentroids& cents, double threshold) {
  const auto [cls, d] = nearest_class(cluster_centroid, cents);
  return d >= threshold ? AuxiliaryLabel::potential_unknown(cls, d) : AuxiliaryLabel::known_class(cls, d);
}

// One auxiliary label per cluster centroid, in cluster-id order.
inline std::vector<AuxiliaryLabel> align(std::span<const Vec> cluster_centroids, const ClassCentroids& cents,
                                         double threshold) {
  if (cents.size() == 0) throw ConfigError("align: empty class-centroid map");
  if (!(threshold > 0.0)) throw ConfigError("align: threshold must be positive");
  std::vector<AuxiliaryLabel> out;
  out.reserve(cluster_centroids.size());
  for (const auto& c : cluster_centroids) out.push_back(align_one(c, cents, threshold));
  return out;
}

// Centroids of each DBSCAN cluster, indexed by cluster id.
inline std::vector<Vec> cluster_centroids(std::span<const Vec> points, const ClusterAssignment& a) {
  std::vector<Vec> out;
  for (const auto& idx : a.members()) {
    std::vector<Vec> vs;
    vs.reserve(idx.size());
    for (std::size_t i : idx) vs.push_back(points[i]);
    out.push_back(centroid(vs));
  }
  return out;
}

// Half the median, over classes, of the squared distance to the nearest other
// class centroid.
inline double adaptive_threshold(const ClassCentroids& cents) {
  if (cents.size() < 2)
    throw ConfigError("adaptive threshold needs at least two class centroids; set an explicit threshold");
  std::vector<double> gaps;
  for (std::size_t a = 0; a < cents.size(); ++a) {
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t b = 0; b < cents.size(); ++b)
      if (a != b) g = std::min(g, squared_distance(cents.centroids[a], cents.centroids[b]));
    gaps.push_back(g);
  }
  std::sort(gaps.begin(), gaps.end());
  const std::size_t n = gaps.size();
  const double median = n % 2 == 1 ? gaps[n / 2] : 0.5 * (gaps[n / 2 - 1] + gaps[n / 2]);
  return median / 2.0;
}

// The threshold a pipeline step uses: the configured value, otherwise the
// adaptive one, otherwise the fallback.
inline double resolve_threshold(const AlignConfig& cfg, const ClassCentroids& cents) {
  if (cfg.threshold) return *cfg.threshold;
  if (cents.size() >= 2) {
    const double t = cfg.adaptive_scale * adaptive_threshold(cents);
    if (t > 0.0 && std::isfinite(t)) return t;
  }
  return cfg.fallback_threshold;
}

}  // namespace m3s
