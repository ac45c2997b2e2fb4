#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "m3s/common.hpp"

namespace m3s {

struct FlowRecord {
  SampleId id = 0;
  Vec features;
  std::optional<std::string> true_label;
};

// Ordered set of known class names. The version counter strictly increases
// every time a class is added.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> names, std::uint64_t version = 0)
      : version_(version) {
    for (auto& n : names) add_unversioned(std::move(n));
  }

  std::size_t size() const { return names_.size(); }
  std::uint64_t version() const { return version_; }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<int> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return static_cast<int>(i);
    return std::nullopt;
  }
  bool contains(std::string_view name) const { return index_of(name).has_value(); }

  int add(std::string name) {
    const int idx = add_unversioned(std::move(name));
    ++version_;
    return idx;
  }

  bool operator==(const LabelSet&) const = default;

 private:
  int add_unversioned(std::string name) {
    if (name.empty()) throw ConfigError("class name must not be empty");
    if (contains(name)) throw ConfigError("duplicate class name '" + name + "'");
    names_.push_back(std::move(name));
    return static_cast<int>(names_.size() - 1);
  }

  std::vector<std::string> names_;
  std::uint64_t version_ = 0;
};

enum class ExpertMode { NoExpert, WithExpert };

struct SplitRatio {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

struct ExperimentSetting {
  std::vector<std::string> known_classes;
  std::vector<std::string> unknown_classes;
  double known_fraction = 0.30;
  SplitRatio split;
  ExpertMode expert_mode = ExpertMode::NoExpert;
  std::uint64_t seed = 0;

  void validate() const {
    if (known_classes.empty()) throw ConfigError("setting needs at least one known class");
    if (!(known_fraction > 0.0 && known_fraction <= 1.0))
      throw ConfigError("known_fraction must lie in (0, 1]");
    if (!(split.train > 0 && split.val > 0 && split.test > 0))
      throw ConfigError("split ratios must be positive");
    if (std::abs(split.train + split.val + split.test - 1.0) > 1e-9)
      throw ConfigError("split ratios must sum to 1");
    std::set<std::string> seen;
    for (const auto& c : known_classes)
      if (!seen.insert(c).second) throw ConfigError("class '" + c + "' listed twice");
    for (const auto& c : unknown_classes)
      if (!seen.insert(c).second)
        throw ConfigError("class '" + c + "' is both known and unknown (or listed twice)");
  }
};

struct LabeledRecord {
  FlowRecord record;
  int label = 0;  // index into the bundle's LabelSet
};

// Per-feature z-scoring fitted on the labeled training share.
struct Standardizer {
  Vec mean;
  Vec scale;

  static Standardizer fit(const std::vector<const Vec*>& rows, std::size_t dim) {
    Standardizer s{Vec(dim, 0.0), Vec(dim, 1.0)};
    if (rows.empty()) return s;
    const double n = static_cast<double>(rows.size());
    for (const Vec* r : rows)
      for (std::size_t j = 0; j < dim; ++j) s.mean[j] += (*r)[j];
    for (auto& m : s.mean) m /= n;
    Vec var(dim, 0.0);
    for (const Vec* r : rows)
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = (*r)[j] - s.mean[j];
        var[j] += d * d;
      }
    for (std::size_t j = 0; j < dim; ++j) {
      const double sd = std::sqrt(var[j] / n);
      s.scale[j] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  void apply(Vec& x) const {
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = (x[j] - mean[j]) / scale[j];
  }
};

struct DatasetBundle {
  std::size_t dim = 0;
  std::vector<LabeledRecord> labeled;
  std::vector<FlowRecord> unlabeled;   // labels hidden
  std::vector<FlowRecord> validation;  // true labels retained, early stopping only
  std::vector<FlowRecord> test;        // true labels retained
  LabelSet label_set;
  // Ground truth of every training-pool record, for evaluation and the
  // simulated expert. The pipeline itself never reads it.
  std::map<SampleId, std::string> truth;
  Standardizer standardizer;
};

struct FlowDataset {
  std::size_t dim = 0;
  std::vector<FlowRecord> records;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace detail

// Reads the comma-delimited flow-feature format: header `id,label,f0..f{d-1}`,
// one record per row, empty label field for unlabeled rows. Record ids are the
// zero-based data-row index; the file's id column is not interpreted.
inline FlowDataset read_records(std::istream& in, std::optional<std::size_t> expected_dim = std::nullopt) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("schema error: missing header row");
  const auto header = detail::split_csv(line);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label")
    throw DataError("schema error: header must start with 'id,label' followed by feature columns");
  const std::size_t dim = header.size() - 2;
  for (std::size_t j = 0; j < dim; ++j)
    if (header[j + 2] != "f" + std::to_string(j))
      throw DataError("schema error: feature column " + std::to_string(j) + " must be named f" +
                      std::to_string(j));
  if (expected_dim && *expected_dim != dim)
    throw DataError("schema error: file declares d=" + std::to_string(dim) + ", expected d=" +
                    std::to_string(*expected_dim));

  FlowDataset ds{dim, {}};
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != dim + 2)
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(dim + 2) +
                      " columns, found " + std::to_string(cells.size()));
    FlowRecord r;
    r.id = row;
    if (!cells[1].empty()) r.true_label = std::string(cells[1]);
    r.features.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const auto v = detail::parse_double(cells[j + 2]);
      if (!v)
        throw DataError("row " + std::to_string(row) + ", column f" + std::to_string(j) +
                        ": non-numeric value '" + std::string(cells[j + 2]) + "'");
      if (!std::isfinite(*v))
        throw DataError("row " + std::to_string(row) + ", column f" + std::to_string(j) +
                        ": non-finite value");
      r.features.push_back(*v);
    }
    ds.records.push_back(std::move(r));
    ++row;
  }
  return ds;
}

inline FlowDataset load_records(const std::string& path, std::optional<std::size_t> expected_dim = std::nullopt) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return read_records(in, expected_dim);
}

inline void write_records(std::ostream& out, const std::vector<FlowRecord>& records, std::size_t dim) {
  out << "id,label";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  std::ostringstream cell;
  cell.imbue(std::locale::classic());
  cell << std::setprecision(17);
  for (const auto& r : records) {
    if (r.features.size() != dim) throw DimensionError("record " + std::to_string(r.id) + " has wrong dimension");
    cell.str("");
    cell << r.id << ',' << r.true_label.value_or("");
    for (double x : r.features) cell << ',' << x;
    out << cell.str() << '\n';
  }
}

inline void save_records(const std::string& path, const std::vector<FlowRecord>& records, std::size_t dim) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_records(out, records, dim);
}

inline std::map<std::string, std::size_t> class_counts(const std::vector<FlowRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records)
    if (r.true_label) ++counts[*r.true_label];
  return counts;
}

namespace detail {
inline std::size_t share(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}
}  // namespace detail

// Class-stratified 6:2:2 split, then the labeled/unlabeled carve of the
// training share. Per class, test and validation take floor(ratio * n) and
// training keeps the remainder. Features are standardized with statistics of
// the labeled share.
inline DatasetBundle make_setting_bundle(const FlowDataset& data, const ExperimentSetting& setting,
                                         bool standardize = true) {
  setting.validate();
  std::map<std::string, std::vector<const FlowRecord*>> by_class;
  for (const auto& r : data.records) {
    if (!r.true_label) throw DataError("record " + std::to_string(r.id) + " has no label");
    if (r.features.size() != data.dim) throw DimensionError("record " + std::to_string(r.id) + " has wrong dimension");
    by_class[*r.true_label].push_back(&r);
  }
  std::set<std::string> requested(setting.known_classes.begin(), setting.known_classes.end());
  requested.insert(setting.unknown_classes.begin(), setting.unknown_classes.end());
  for (const auto& c : requested)
    if (!by_class.count(c)) throw ConfigError("class '" + c + "' is absent from the data");
  for (const auto& [c, _] : by_class)
    if (!requested.count(c)) throw ConfigError("class '" + c + "' is neither known nor unknown in the setting");

  DatasetBundle b;
  b.dim = data.dim;
  b.label_set = LabelSet(setting.known_classes);

  Rng rng(setting.seed);
  for (auto& [name, members] : by_class) {
    std::sort(members.begin(), members.end(), [](auto* a, auto* c) { return a->id < c->id; });
    rng.shuffle(members);
    const std::size_t n = members.size();
    const std::size_t n_test = detail::share(setting.split.test, n);
    const std::size_t n_val = detail::share(setting.split.val, n);
    const std::size_t n_train = n - n_test - n_val;
    const auto known = b.label_set.index_of(name);
    std::size_t n_lab = 0;
    if (known) {
      n_lab = std::min(n_train, detail::share(setting.known_fraction, n_train));
      if (n_lab == 0 && n_train > 0) n_lab = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const FlowRecord& r = *members[i];
      if (i < n_test) {
        b.test.push_back(r);
      } else if (i < n_test + n_val) {
        b.validation.push_back(r);
      } else {
        b.truth[r.id] = name;
        if (i < n_test + n_val + n_lab) {
          b.labeled.push_back({r, *known});
        } else {
          FlowRecord hidden = r;
          hidden.true_label.reset();
          b.unlabeled.push_back(std::move(hidden));
        }
      }
    }
  }
  auto by_id = [](const auto& a, const auto& c) { return a.id < c.id; };
  std::sort(b.labeled.begin(), b.labeled.end(), [](const auto& a, const auto& c) { return a.record.id < c.record.id; });
  std::sort(b.unlabeled.begin(), b.unlabeled.end(), by_id);
  std::sort(b.validation.begin(), b.validation.end(), by_id);
  std::sort(b.test.begin(), b.test.end(), by_id);

  if (standardize) {
    std::vector<const Vec*> rows;
    for (const auto& lr : b.labeled) rows.push_back(&lr.record.features);
    b.standardizer = Standardizer::fit(rows, b.dim);
    for (auto& lr : b.labeled) b.standardizer.apply(lr.record.features);
    for (auto& r : b.unlabeled) b.standardizer.apply(r.features);
    for (auto& r : b.validation) b.standardizer.apply(r.features);
    for (auto& r : b.test) b.standardizer.apply(r.features);
  } else {
    b.standardizer = Standardizer{Vec(b.dim, 0.0), Vec(b.dim, 1.0)};
  }
  return b;
}

inline std::string synth_class_name(int k, int n_classes) {
  const std::string digits = std::to_string(n_classes - 1);
  std::string num = std::to_string(k);
  num.insert(0, digits.size() - num.size(), '0');
  return "class" + num;
}

// Isotropic unit-variance Gaussian blobs whose means are pairwise at least
// `separation` apart.
inline FlowDataset synth_gaussians(int n_classes, int per_class, int dim, double separation, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("synth_gaussians: n_classes must be >= 2");
  if (per_class < 10) throw ConfigError("synth_gaussians: per_class must be >= 10");
  if (dim < 1) throw ConfigError("synth_gaussians: dim must be >= 1");
  if (!(separation > 0.0)) throw ConfigError("synth_gaussians: separation must be > 0");

  Rng rng(seed);
  const auto d = static_cast<std::size_t>(dim);
  std::vector<Vec> means;
  if (n_classes <= dim) {
    // Scaled simplex corners: every pair is exactly `separation` apart.
    const double a = separation / std::numbers::sqrt2 * (1.0 + 1e-12);
    for (int k = 0; k < n_classes; ++k) {
      Vec m(d, 0.0);
      m[static_cast<std::size_t>(k)] = a;
      means.push_back(std::move(m));
    }
  } else {
    double half_width = separation * n_classes;
    while (static_cast<int>(means.size()) < n_classes) {
      for (int attempt = 0; attempt < 10000 && static_cast<int>(means.size()) < n_classes; ++attempt) {
        Vec m(d);
        for (auto& x : m) x = rng.uniform(-half_width, half_width);
        bool ok = true;
        for (const auto& o : means) {
          double s = 0.0;
          for (std::size_t j = 0; j < d; ++j) s += (m[j] - o[j]) * (m[j] - o[j]);
          if (std::sqrt(s) < separation) {
            ok = false;
            break;
          }
        }
        if (ok) means.push_back(std::move(m));
      }
      half_width *= 2.0;
    }
  }

  FlowDataset ds{d, {}};
  ds.records.reserve(static_cast<std::size_t>(n_classes * per_class));
  SampleId id = 0;
  for (int k = 0; k < n_classes; ++k) {
    const std::string name = synth_class_name(k, n_classes);
    for (int i = 0; i < per_class; ++i) {
      FlowRecord r{id++, Vec(d), name};
      for (std::size_t j = 0; j < d; ++j) r.features[j] = means[static_cast<std::size_t>(k)][j] + rng.normal();
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

// Category distribution of the public Tor traffic dataset used in the
// reference experiments, and its two known/unknown settings.
struct ClassCount {
  const char* name;
  std::size_t count;
};

inline constexpr std::array<ClassCount, 8> kIscxTorCounts{{
    {"Audio", 1026},
    {"Browsing", 2645},
    {"Chat", 485},
    {"FILE-Transfer", 1663},
    {"Mail", 497},
    {"P2P", 2139},
    {"Video", 1529},
    {"VOIP", 4524},
}};

inline ExperimentSetting iscxtor_setting(int which, std::uint64_t seed = 0) {
  ExperimentSetting s;
  s.seed = seed;
  if (which == 1) {
    s.known_classes = {"VOIP", "P2P", "FILE-Transfer"};
    s.unknown_classes = {"Browsing", "Video", "Mail", "Audio", "Chat"};
  } else if (which == 2) {
    s.known_classes = {"VOIP", "Video", "P2P", "Chat", "FILE-Transfer"};
    s.unknown_classes = {"Browsing", "Mail", "Audio"};
  } else {
    throw ConfigError("ISCXTor setting must be 1 or 2");
  }
  return s;
}

// Mismatches between a loaded dataset's class counts and the reference
// distribution; empty when they agree.
inline std::vector<std::string> check_iscxtor_counts(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::string> problems;
  for (const auto& [name, expected] : kIscxTorCounts) {
    const auto it = counts.find(name);
    const std::size_t got = it == counts.end() ? 0 : it->second;
    if (got != expected)
      problems.push_back(std::string(name) + ": expected " + std::to_string(expected) + ", found " + std::to_string(got));
  }
  for (const auto& [name, n] : counts) {
    const bool listed = std::any_of(kIscxTorCounts.begin(), kIscxTorCounts.end(),
                                    [&](const ClassCount& c) { return name == c.name; });
    if (!listed) problems.push_back(name + ": not a reference class (" + std::to_string(n) + " records)");
  }
  return problems;
}

}  // namespace m3s
