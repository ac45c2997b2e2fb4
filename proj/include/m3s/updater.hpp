#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "m3s/alignment.hpp"
#include "m3s/classifier.hpp"
#include "m3s/common.hpp"
#include "m3s/dataset.hpp"

namespace m3s {

inline double confidence(std::span<const double> probs) {
  if (probs.empty()) throw DimensionError("confidence of an empty probability vector");
  return *std::max_element(probs.begin(), probs.end());
}

struct ConsistencyConfig {
  double top_fraction = 0.10;
  double bottom_fraction = 0.10;

  void validate() const {
    if (!(top_fraction > 0.0 && top_fraction < 1.0)) throw ConfigError("top_fraction must lie in (0, 1)");
    if (!(bottom_fraction > 0.0 && bottom_fraction < 1.0)) throw ConfigError("bottom_fraction must lie in (0, 1)");
    if (top_fraction + bottom_fraction > 1.0 + 1e-12) throw ConfigError("top_fraction + bottom_fraction must not exceed 1");
  }
};

enum class Outcome { Accept, DetectUnknown, Defer };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Accept: return "accept";
    case Outcome::DetectUnknown: return "unknown";
    case Outcome::Defer: return "defer";
  }
  return "?";
}

struct Candidate {
  SampleId id = 0;
  Vec probs;
  std::optional<AuxiliaryLabel> aux;  // nullopt for DBSCAN noise
  int cluster = kNoise;
};

struct UpdateDecision {
  SampleId id = 0;
  Outcome outcome = Outcome::Defer;
  int cls = -1;  // pseudo-label for Accept
  double confidence = 0.0;
  int predicted = -1;
  std::optional<AuxiliaryLabel> aux;
  int cluster = kNoise;
};

struct ConsistencyResult {
  std::vector<UpdateDecision> decisions;  // input order
  std::size_t top_band = 0;
  std::size_t bottom_band = 0;
  bool bottom_truncated = false;
  // Highest confidence inside the bottom band; NaN when the band is empty.
  double bottom_cutoff = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline std::size_t band_size(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}
}  // namespace detail

// Ranks samples by confidence (descending, ties by ascending id). The top band
// accepts a pseudo-label when the cluster's auxiliary label agrees with the
// model's argmax; the bottom band reports an unknown when the cluster failed
// to align. Everything else, and every noise point, is deferred.
inline ConsistencyResult consistency_check(std::span<const Candidate> samples, const ConsistencyConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw ConfigError("consistency_check needs at least one sample");
  const std::size_t n = samples.size();

  ConsistencyResult r;
  r.top_band = std::min(n, detail::band_size(cfg.top_fraction, n));
  r.bottom_band = detail::band_size(cfg.bottom_fraction, n);
  if (r.top_band + r.bottom_band > n) {
    r.bottom_band = n - r.top_band;
    r.bottom_truncated = true;
    log(LogLevel::Warn, "consistency bands overlap on a pool of " + std::to_string(n) +
                            "; bottom band truncated to " + std::to_string(r.bottom_band));
  }

  r.decisions.resize(n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    auto& d = r.decisions[i];
    d.id = s.id;
    d.confidence = confidence(s.probs);
    d.predicted = static_cast<int>(argmax(s.probs));
    d.aux = s.aux;
    d.cluster = s.cluster;
    order[i] = i;
  }
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = r.decisions[a];
    const auto& db = r.decisions[b];
    if (da.confidence != db.confidence) return da.confidence > db.confidence;
    return da.id < db.id;
  });

  for (std::size_t rank = 0; rank < n; ++rank) {
    auto& d = r.decisions[order[rank]];
    if (!d.aux) continue;
    if (rank < r.top_band) {
      if (d.aux->known && d.aux->cls == d.predicted) {
        d.outcome = Outcome::Accept;
        d.cls = d.predicted;
      }
    } else if (rank >= n - r.bottom_band) {
      if (!d.aux->known) d.outcome = Outcome::DetectUnknown;
    }
  }
  if (r.bottom_band > 0) r.bottom_cutoff = r.decisions[order[n - r.bottom_band]].confidence;
  return r;
}

enum class GroupStatus { Pending, Staged, Labeled, Dismissed };

inline const char* to_string(GroupStatus s) {
  switch (s) {
    case GroupStatus::Pending: return "pending";
    case GroupStatus::Staged: return "staged";
    case GroupStatus::Labeled: return "labeled";
    case GroupStatus::Dismissed: return "dismissed";
  }
  return "?";
}

struct Verdict {
  enum class Action { Label, Dismiss };
  Action action = Action::Dismiss;
  std::string class_name;  // required for Label

  static Verdict label(std::string name) { return {Action::Label, std::move(name)}; }
  static Verdict dismiss() { return {Action::Dismiss, {}}; }
  bool operator==(const Verdict&) const = default;
};

struct ExpertGroup {
  int gid = 0;
  std::size_t step = 0;
  int cluster = kNoise;
  std::vector<FlowRecord> samples;
  double mean_confidence = 0.0;
  double distance_to_nearest = 0.0;  // squared, to the nearest class centroid
  GroupStatus status = GroupStatus::Pending;
  std::optional<Verdict> verdict;
};

// Unknown-traffic groups awaiting (or past) an expert verdict.
class ExpertQueue {
 public:
  int add_group(ExpertGroup g) {
    for (const auto& s : g.samples)
      if (holds_open_sample(s.id)) throw StateError("sample " + std::to_string(s.id) + " already in an open group");
    g.gid = static_cast<int>(groups_.size());
    g.status = GroupStatus::Pending;
    g.verdict.reset();
    groups_.push_back(std::move(g));
    return groups_.back().gid;
  }

  const std::vector<ExpertGroup>& groups() const { return groups_; }
  std::vector<ExpertGroup>& groups() { return groups_; }

  const ExpertGroup* find(int gid) const {
    if (gid < 0 || static_cast<std::size_t>(gid) >= groups_.size()) return nullptr;
    return &groups_[static_cast<std::size_t>(gid)];
  }
  ExpertGroup* find(int gid) { return const_cast<ExpertGroup*>(std::as_const(*this).find(gid)); }

  const ExpertGroup& at(int gid) const {
    const auto* g = find(gid);
    if (!g) throw StateError("no expert group " + std::to_string(gid));
    return *g;
  }

  // Records a verdict to be applied between steps.
  void stage(int gid, Verdict v) {
    auto* g = find(gid);
    if (!g) throw StateError("no expert group " + std::to_string(gid));
    if (g->status != GroupStatus::Pending)
      throw StateError("expert group " + std::to_string(gid) + " is " + to_string(g->status) + ", not pending");
    if (v.action == Verdict::Action::Label && v.class_name.empty())
      throw ConfigError("a label verdict needs a class name");
    g->verdict = std::move(v);
    g->status = GroupStatus::Staged;
  }

  std::vector<int> with_status(GroupStatus s) const {
    std::vector<int> out;
    for (const auto& g : groups_)
      if (g.status == s) out.push_back(g.gid);
    return out;
  }

  // Samples held by groups that have not been resolved yet.
  std::size_t open_sample_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_)
      if (g.status == GroupStatus::Pending || g.status == GroupStatus::Staged) n += g.samples.size();
    return n;
  }

  bool holds_open_sample(SampleId id) const {
    for (const auto& g : groups_)
      if (g.status == GroupStatus::Pending || g.status == GroupStatus::Staged)
        for (const auto& s : g.samples)
          if (s.id == id) return true;
    return false;
  }

 private:
  std::vector<ExpertGroup> groups_;
};

struct ApplyResult {
  std::size_t accepted = 0;
  std::size_t detected_unknown = 0;
  std::size_t deferred = 0;
  std::map<int, std::size_t> accepted_per_class;
  std::vector<int> new_groups;
};

// Moves accepted samples into the labeled set and unknown detections into
// the expert queue (WithExpert) or the final-unknown record (NoExpert).
inline ApplyResult apply_decisions(DatasetBundle& bundle, std::span<const UpdateDecision> decisions, ExpertMode mode,
                                   ExpertQueue& queue, std::vector<FlowRecord>& final_unknown, std::size_t step = 0) {
  std::map<SampleId, std::size_t> pos;
  for (std::size_t i = 0; i < bundle.unlabeled.size(); ++i) pos[bundle.unlabeled[i].id] = i;
  std::set<SampleId> seen;
  for (const auto& d : decisions) {
    if (!pos.count(d.id)) throw StateError("decision references sample " + std::to_string(d.id) + " not in the unlabeled pool");
    if (!seen.insert(d.id).second) throw StateError("duplicate decision for sample " + std::to_string(d.id));
    if (d.outcome == Outcome::Accept && (d.cls < 0 || static_cast<std::size_t>(d.cls) >= bundle.label_set.size()))
      throw StateError("pseudo-label " + std::to_string(d.cls) + " outside the label set");
  }

  ApplyResult res;
  std::map<int, std::vector<const UpdateDecision*>> unknown_by_cluster;
  std::set<SampleId> removed;
  for (const auto& d : decisions) {
    switch (d.outcome) {
      case Outcome::Accept: {
        bundle.labeled.push_back({bundle.unlabeled[pos[d.id]], d.cls});
        removed.insert(d.id);
        ++res.accepted;
        ++res.accepted_per_class[d.cls];
        break;
      }
      case Outcome::DetectUnknown:
        unknown_by_cluster[d.cluster].push_back(&d);
        removed.insert(d.id);
        ++res.detected_unknown;
        break;
      case Outcome::Defer:
        ++res.deferred;
        break;
    }
  }

  for (const auto& [cluster, members] : unknown_by_cluster) {
    if (mode == ExpertMode::NoExpert) {
      for (const auto* d : members) final_unknown.push_back(bundle.unlabeled[pos[d->id]]);
      continue;
    }
    ExpertGroup g;
    g.step = step;
    g.cluster = cluster;
    double conf = 0.0;
    for (const auto* d : members) {
      g.samples.push_back(bundle.unlabeled[pos[d->id]]);
      conf += d->confidence;
    }
    g.mean_confidence = conf / static_cast<double>(members.size());
    g.distance_to_nearest = members.front()->aux ? members.front()->aux->distance : 0.0;
    res.new_groups.push_back(queue.add_group(std::move(g)));
  }

  std::erase_if(bundle.unlabeled, [&](const FlowRecord& r) { return removed.count(r.id) > 0; });
  return res;
}

struct ResolveResult {
  // Set when the verdict introduced a class: the model must grow to this
  // many outputs.
  std::optional<std::size_t> expand_to;
  std::size_t moved = 0;
};

// Applies an expert verdict to a pending or staged group.
inline ResolveResult expert_resolve(ExpertQueue& queue, int gid, const Verdict& verdict, DatasetBundle& bundle) {
  ExpertGroup* g = queue.find(gid);
  if (!g) throw StateError("no expert group " + std::to_string(gid));
  if (g->status != GroupStatus::Pending && g->status != GroupStatus::Staged)
    throw StateError("expert group " + std::to_string(gid) + " is already " + to_string(g->status));

  ResolveResult r;
  r.moved = g->samples.size();
  if (verdict.action == Verdict::Action::Label) {
    if (verdict.class_name.empty()) throw ConfigError("a label verdict needs a class name");
    auto idx = bundle.label_set.index_of(verdict.class_name);
    if (!idx) {
      idx = bundle.label_set.add(verdict.class_name);
      r.expand_to = bundle.label_set.size();
    }
    for (auto& s : g->samples) bundle.labeled.push_back({s, *idx});
    g->status = GroupStatus::Labeled;
  } else {
    for (auto& s : g->samples) bundle.unlabeled.push_back(s);
    std::sort(bundle.unlabeled.begin(), bundle.unlabeled.end(),
              [](const FlowRecord& a, const FlowRecord& b) { return a.id < b.id; });
    g->status = GroupStatus::Dismissed;
  }
  g->verdict = verdict;
  return r;
}

// Simulated expert: labels a group with the majority ground-truth class of
// its members, ties broken by class name.
inline Verdict oracle_expert(const ExpertGroup& group, const std::map<SampleId, std::string>& truth) {
  if (group.samples.empty()) throw StateError("expert group " + std::to_string(group.gid) + " is empty");
  std::map<std::string, std::size_t> votes;
  for (const auto& s : group.samples) {
    const auto it = truth.find(s.id);
    if (it == truth.end()) throw StateError("no ground truth for sample " + std::to_string(s.id));
    ++votes[it->second];
  }
  const auto best = std::max_element(votes.begin(), votes.end(), [](const auto& a, const auto& b) {
    return a.second < b.second;  // first maximum in name order wins
  });
  return Verdict::label(best->first);
}

}  // namespace m3s
