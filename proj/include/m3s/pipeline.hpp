#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3s/alignment.hpp"
#include "m3s/classifier.hpp"
#include "m3s/clustering.hpp"
#include "m3s/common.hpp"
#include "m3s/dataset.hpp"
#include "m3s/evaluation.hpp"
#include "m3s/updater.hpp"

namespace m3s {

struct ClusteringConfig {
  std::optional<double> eps;         // nullopt: suggest_eps
  std::optional<std::size_t> min_pts;  // nullopt: max(4, ceil(log2 N))
  double eps_floor = 1e-6;
  double eps_quantile = 0.9;  // k-distance quantile used by suggest_eps
};

struct PipelineConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding = 32;
  Activation activation = Activation::ReLU;
  TrainConfig train;
  bool warm_start = true;
  ClusteringConfig clustering;
  AlignConfig align;
  ConsistencyConfig consistency;
  ExpertMode mode = ExpertMode::NoExpert;
  // WithExpert only: verdicts come from the ground-truth oracle instead of
  // a human through the service.
  bool oracle_expert = true;
  std::uint64_t seed = 0;

  void validate() const {
    train.validate();
    align.validate();
    consistency.validate();
    if (clustering.eps && !(*clustering.eps > 0.0)) throw ConfigError("clustering eps must be positive");
    if (clustering.min_pts && *clustering.min_pts == 0) throw ConfigError("clustering min_pts must be >= 1");
    if (!(clustering.eps_floor > 0.0)) throw ConfigError("clustering eps_floor must be positive");
    if (!(clustering.eps_quantile > 0.0 && clustering.eps_quantile <= 1.0))
      throw ConfigError("clustering eps_quantile must lie in (0, 1]");
  }

  NetworkShape shape(std::size_t input, std::size_t classes) const {
    return NetworkShape{input, hidden, embedding, classes, activation};
  }
};

struct StepReport {
  std::size_t step = 0;
  std::size_t pool_size = 0;
  std::size_t accepted = 0;
  std::size_t detected_unknown = 0;
  std::size_t deferred = 0;  // excludes noise
  std::size_t noise = 0;
  std::map<std::string, std::size_t> accepted_per_class;
  std::size_t cluster_count = 0;
  double eps = 0.0;
  std::size_t min_pts = 0;
  double align_threshold = 0.0;
  double confidence_cutoff = 0.0;  // NaN-free: 0 when no bottom band
  std::size_t top_band = 0;
  std::size_t bottom_band = 0;
  double train_loss_initial = 0.0;
  double train_loss = 0.0;
  std::size_t epochs_run = 0;
  std::size_t labeled_size = 0;
  std::size_t num_classes = 0;
  std::uint64_t label_version = 0;
  std::vector<std::string> classes_added;
  std::size_t verdicts_applied = 0;
  std::vector<int> new_groups;
  std::optional<MetricSet> evaluation;
  double wall_time_ms = 0.0;

  std::size_t decided() const { return accepted + detected_unknown; }
};

inline nlohmann::json to_json(const StepReport& r, bool include_timing = false) {
  nlohmann::json j{{"step", r.step},
                   {"pool_size", r.pool_size},
                   {"counts", {{"accepted", r.accepted}, {"detected_unknown", r.detected_unknown}, {"deferred", r.deferred}, {"noise", r.noise}}},
                   {"accepted_per_class", r.accepted_per_class},
                   {"cluster_count", r.cluster_count},
                   {"thresholds", {{"eps", r.eps}, {"min_pts", r.min_pts}, {"align", r.align_threshold}, {"confidence_cutoff", r.confidence_cutoff}, {"top_band", r.top_band}, {"bottom_band", r.bottom_band}}},
                   {"train", {{"initial_loss", r.train_loss_initial}, {"final_loss", r.train_loss}, {"epochs", r.epochs_run}}},
                   {"labeled_size", r.labeled_size},
                   {"num_classes", r.num_classes},
                   {"label_version", r.label_version},
                   {"classes_added", r.classes_added},
                   {"verdicts_applied", r.verdicts_applied},
                   {"new_groups", r.new_groups}};
  j["evaluation"] = r.evaluation ? to_json(*r.evaluation) : nlohmann::json(nullptr);
  if (include_timing) j["wall_time_ms"] = r.wall_time_ms;
  return j;
}

inline StepReport step_report_from_json(const nlohmann::json& j) {
  StepReport r;
  r.step = j.at("step");
  r.pool_size = j.at("pool_size");
  const auto& c = j.at("counts");
  r.accepted = c.at("accepted");
  r.detected_unknown = c.at("detected_unknown");
  r.deferred = c.at("deferred");
  r.noise = c.at("noise");
  r.accepted_per_class = j.at("accepted_per_class").get<std::map<std::string, std::size_t>>();
  r.cluster_count = j.at("cluster_count");
  const auto& t = j.at("thresholds");
  r.eps = t.at("eps");
  r.min_pts = t.at("min_pts");
  r.align_threshold = t.at("align");
  r.confidence_cutoff = t.at("confidence_cutoff");
  r.top_band = t.at("top_band");
  r.bottom_band = t.at("bottom_band");
  const auto& tr = j.at("train");
  r.train_loss_initial = tr.at("initial_loss");
  r.train_loss = tr.at("final_loss");
  r.epochs_run = tr.at("epochs");
  r.labeled_size = j.at("labeled_size");
  r.num_classes = j.at("num_classes");
  r.label_version = j.at("label_version");
  r.classes_added = j.at("classes_added").get<std::vector<std::string>>();
  r.verdicts_applied = j.at("verdicts_applied");
  r.new_groups = j.at("new_groups").get<std::vector<int>>();
  if (!j.at("evaluation").is_null()) {
    const auto& e = j.at("evaluation");
    r.evaluation = MetricSet{e.at("accuracy"), e.at("precision"), e.at("recall"), e.at("fpr")};
  }
  if (j.contains("wall_time_ms")) r.wall_time_ms = j.at("wall_time_ms");
  return r;
}

struct PseudoLabel {
  SampleId id = 0;
  int cls = 0;
  std::size_t step = 0;
};

struct PipelineState {
  std::size_t step = 0;
  DatasetBundle bundle;
  Classifier model;
  ExpertQueue queue;
  std::vector<FlowRecord> final_unknown;
  PipelineConfig config;
  std::vector<PseudoLabel> pseudo_labels;
  std::size_t expert_labeled = 0;
  std::size_t initial_pool = 0;  // labeled + unlabeled at creation
  std::size_t quiet_steps = 0;
  // Cutoff of the most recent non-empty bottom band.
  std::optional<double> confidence_cutoff;
  double align_threshold = 0.0;

  double expert_proportion() const {
    return initial_pool == 0 ? 0.0 : static_cast<double>(expert_labeled) / static_cast<double>(initial_pool);
  }
};

inline PipelineState make_state(DatasetBundle bundle, const PipelineConfig& cfg) {
  cfg.validate();
  PipelineState s;
  s.config = cfg;
  s.initial_pool = bundle.labeled.size() + bundle.unlabeled.size();
  s.model = Classifier::create(cfg.shape(bundle.dim, bundle.label_set.size()), derive_seed(cfg.seed, 0x1417));
  s.model.set_label_version(bundle.label_set.version());
  s.bundle = std::move(bundle);
  return s;
}

inline std::vector<Example> labeled_examples(const DatasetBundle& b) {
  std::vector<Example> out;
  out.reserve(b.labeled.size());
  for (const auto& lr : b.labeled) out.push_back({lr.record.features, lr.label});
  return out;
}

inline std::vector<Example> validation_examples(const DatasetBundle& b) {
  std::vector<Example> out;
  for (const auto& r : b.validation)
    if (r.true_label)
      if (const auto idx = b.label_set.index_of(*r.true_label)) out.push_back({r.features, *idx});
  return out;
}

// Class centroids of the labeled embeddings under the given model.
inline ClassCentroids labeled_centroids(const Classifier& model, const DatasetBundle& b) {
  std::vector<Vec> emb;
  std::vector<int> labels;
  emb.reserve(b.labeled.size());
  for (const auto& lr : b.labeled) {
    emb.push_back(model.embed(lr.record.features));
    labels.push_back(lr.label);
  }
  return ClassCentroids::compute(emb, labels);
}

inline UnknownRule unknown_rule(const PipelineState& s) {
  UnknownRule rule;
  if (!s.confidence_cutoff || s.bundle.labeled.empty()) return rule;
  rule.enabled = true;
  rule.confidence_cutoff = *s.confidence_cutoff;
  rule.centroids = labeled_centroids(s.model, s.bundle);
  rule.threshold = resolve_threshold(s.config.align, rule.centroids);
  return rule;
}

inline EvalResult evaluate_state(const PipelineState& s) {
  return evaluate(s.model, s.bundle.test, s.bundle.label_set, unknown_rule(s));
}

// Applies every staged expert verdict; returns (verdicts applied, new classes).
inline std::pair<std::size_t, std::vector<std::string>> apply_staged_verdicts(PipelineState& s) {
  std::size_t applied = 0;
  std::vector<std::string> added;
  for (int gid : s.queue.with_status(GroupStatus::Staged)) {
    const Verdict v = *s.queue.at(gid).verdict;
    const ResolveResult r = expert_resolve(s.queue, gid, v, s.bundle);
    ++applied;
    if (v.action == Verdict::Action::Label) s.expert_labeled += r.moved;
    if (r.expand_to) {
      s.model = expand_output(std::move(s.model), *r.expand_to, derive_seed(s.config.seed, 0xE0000 + static_cast<std::uint64_t>(gid)));
      added.push_back(v.class_name);
    }
  }
  s.model.set_label_version(s.bundle.label_set.version());
  return {applied, added};
}

// One iteration: fine-tune on the labeled set, cluster the pool's embeddings,
// align clusters to class centroids, then run the consistency check and move
// samples accordingly.
inline StepReport run_step(PipelineState& s) {
  const auto t0 = std::chrono::steady_clock::now();
  const PipelineConfig& cfg = s.config;
  StepReport rep;
  rep.step = s.step + 1;

  auto [applied, added] = apply_staged_verdicts(s);
  rep.verdicts_applied = applied;
  rep.classes_added = std::move(added);

  if (s.bundle.labeled.empty()) throw StateError("run_step: the labeled set is empty");
  if (s.model.num_classes() != s.bundle.label_set.size()) throw StateError("model outputs do not match the label set");

  // (1) supervised training
  Classifier start = cfg.warm_start ? s.model
                                    : Classifier::create(cfg.shape(s.bundle.dim, s.bundle.label_set.size()),
                                                         derive_seed(cfg.seed, 0x2000 + rep.step));
  start.set_label_version(s.bundle.label_set.version());
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 0x3000 + rep.step);
  const auto train_set = labeled_examples(s.bundle);
  const auto val_set = validation_examples(s.bundle);
  TrainResult tr;
  try {
    tr = train(std::move(start), train_set, tc, val_set);
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(e.what()) + " (step " + std::to_string(rep.step) +
                        "; last finite model is the previous step's checkpoint)");
  }
  s.model = std::move(tr.model);
  rep.train_loss_initial = tr.initial_loss();
  rep.train_loss = tr.final_loss();
  rep.epochs_run = tr.epoch_losses.size();

  const auto& pool = s.bundle.unlabeled;
  rep.pool_size = pool.size();
  const ClassCentroids cents = labeled_centroids(s.model, s.bundle);
  rep.align_threshold = resolve_threshold(cfg.align, cents);
  s.align_threshold = rep.align_threshold;

  if (!pool.empty()) {
    // (2) embed and cluster the pool
    std::vector<Vec> emb;
    std::vector<Vec> probs;
    emb.reserve(pool.size());
    probs.reserve(pool.size());
    for (const auto& r : pool) {
      auto f = s.model.forward(r.features);
      emb.push_back(std::move(f.embedding));
      probs.push_back(std::move(f.probs));
    }
    const std::size_t min_pts = cfg.clustering.min_pts.value_or(default_min_pts(pool.size()));
    double eps = cfg.clustering.eps.value_or(0.0);
    if (!cfg.clustering.eps && pool.size() > min_pts) eps = suggest_eps(emb, min_pts, cfg.clustering.eps_quantile);
    eps = std::max(eps, cfg.clustering.eps_floor);
    const ClusterAssignment ca = dbscan(emb, eps, min_pts);
    rep.eps = eps;
    rep.min_pts = min_pts;
    rep.cluster_count = static_cast<std::size_t>(ca.cluster_count);
    rep.noise = ca.noise_count();

    // (3) align clusters with the known classes
    const auto aux = align(cluster_centroids(emb, ca), cents, rep.align_threshold);

    // (4) consistency check and update
    std::vector<Candidate> cands(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      cands[i].id = pool[i].id;
      cands[i].probs = std::move(probs[i]);
      cands[i].cluster = ca.labels[i];
      if (ca.labels[i] != kNoise) cands[i].aux = aux[static_cast<std::size_t>(ca.labels[i])];
    }
    const ConsistencyResult cr = consistency_check(cands, cfg.consistency);
    rep.top_band = cr.top_band;
    rep.bottom_band = cr.bottom_band;
    if (cr.bottom_band > 0) {
      s.confidence_cutoff = cr.bottom_cutoff;
      rep.confidence_cutoff = cr.bottom_cutoff;
    }
    for (const auto& d : cr.decisions)
      if (d.outcome == Outcome::Accept) s.pseudo_labels.push_back({d.id, d.cls, rep.step});

    const ApplyResult ar = apply_decisions(s.bundle, cr.decisions, cfg.mode, s.queue, s.final_unknown, rep.step);
    rep.accepted = ar.accepted;
    rep.detected_unknown = ar.detected_unknown;
    rep.deferred = ar.deferred - rep.noise;
    for (const auto& [cls, n] : ar.accepted_per_class) rep.accepted_per_class[s.bundle.label_set.name(static_cast<std::size_t>(cls))] = n;
    rep.new_groups = ar.new_groups;

    if (cfg.mode == ExpertMode::WithExpert && cfg.oracle_expert)
      for (int gid : ar.new_groups) s.queue.stage(gid, oracle_expert(s.queue.at(gid), s.bundle.truth));
  }

  rep.labeled_size = s.bundle.labeled.size();
  rep.num_classes = s.bundle.label_set.size();
  rep.label_version = s.bundle.label_set.version();
  if (!s.bundle.test.empty()) rep.evaluation = evaluate_state(s).metrics;

  s.quiet_steps = rep.decided() == 0 ? s.quiet_steps + 1 : 0;
  s.step = rep.step;
  rep.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

struct StopRule {
  std::size_t max_steps = 15;
  std::size_t quiescent_steps = 2;  // consecutive steps without accept/unknown decisions

  void validate() const {
    if (max_steps == 0) throw ConfigError("max_steps must be positive");
    if (quiescent_steps == 0) throw ConfigError("quiescent_steps must be positive");
  }
  bool fires(const PipelineState& s, std::size_t steps_done) const {
    return steps_done >= max_steps || s.quiet_steps >= quiescent_steps;
  }
};

using StepCallback = std::function<void(const PipelineState&, const StepReport&)>;

inline std::vector<StepReport> run(PipelineState& s, const StopRule& stop, const StepCallback& on_step = {}) {
  stop.validate();
  std::vector<StepReport> reports;
  while (!stop.fires(s, reports.size())) {
    reports.push_back(run_step(s));
    if (on_step) on_step(s, reports.back());
  }
  return reports;
}

// ---------------------------------------------------------------------------
// Checkpointing

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json record_json(const FlowRecord& r) {
  nlohmann::json j{{"id", r.id}, {"x", r.features}};
  j["y"] = r.true_label ? nlohmann::json(*r.true_label) : nlohmann::json(nullptr);
  return j;
}

inline FlowRecord record_from(const nlohmann::json& j) {
  FlowRecord r{j.at("id").get<SampleId>(), j.at("x").get<Vec>(), std::nullopt};
  if (!j.at("y").is_null()) r.true_label = j.at("y").get<std::string>();
  return r;
}

inline nlohmann::json records_json(const std::vector<FlowRecord>& rs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : rs) a.push_back(record_json(r));
  return a;
}

inline std::vector<FlowRecord> records_from(const nlohmann::json& a) {
  std::vector<FlowRecord> out;
  for (const auto& j : a) out.push_back(record_from(j));
  return out;
}

inline nlohmann::json verdict_json(const std::optional<Verdict>& v) {
  if (!v) return nullptr;
  return {{"action", v->action == Verdict::Action::Label ? "label" : "dismiss"}, {"class_name", v->class_name}};
}

inline std::optional<Verdict> verdict_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  const auto a = j.at("action").get<std::string>();
  if (a == "label") return Verdict::label(j.at("class_name").get<std::string>());
  if (a == "dismiss") return Verdict::dismiss();
  throw CorruptionError("unknown verdict action '" + a + "'");
}

inline GroupStatus status_from(const std::string& s) {
  for (auto st : {GroupStatus::Pending, GroupStatus::Staged, GroupStatus::Labeled, GroupStatus::Dismissed})
    if (s == to_string(st)) return st;
  throw CorruptionError("unknown group status '" + s + "'");
}

inline nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt_double(const nlohmann::json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace detail

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j{
      {"hidden", c.hidden},
      {"embedding", c.embedding},
      {"activation", to_string(c.activation)},
      {"train", {{"epochs", c.train.epochs}, {"batch_size", c.train.batch_size}, {"learning_rate", c.train.learning_rate}, {"patience", c.train.patience}, {"weight_decay", c.train.weight_decay}}},
      {"warm_start", c.warm_start},
      {"clustering", {{"eps", detail::opt_json(c.clustering.eps)}, {"eps_floor", c.clustering.eps_floor}, {"eps_quantile", c.clustering.eps_quantile}}},
      {"align", {{"threshold", detail::opt_json(c.align.threshold)}, {"adaptive_scale", c.align.adaptive_scale}, {"fallback_threshold", c.align.fallback_threshold}}},
      {"consistency", {{"top_fraction", c.consistency.top_fraction}, {"bottom_fraction", c.consistency.bottom_fraction}}},
      {"mode", c.mode == ExpertMode::WithExpert ? "with-expert" : "no-expert"},
      {"oracle_expert", c.oracle_expert},
      {"seed", c.seed}};
  j["clustering"]["min_pts"] = c.clustering.min_pts ? nlohmann::json(*c.clustering.min_pts) : nlohmann::json(nullptr);
  return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.embedding = j.at("embedding");
  c.activation = activation_from_string(j.at("activation").get<std::string>());
  const auto& t = j.at("train");
  c.train.epochs = t.at("epochs");
  c.train.batch_size = t.at("batch_size");
  c.train.learning_rate = t.at("learning_rate");
  c.train.patience = t.at("patience");
  c.train.weight_decay = t.at("weight_decay");
  c.warm_start = j.at("warm_start");
  c.clustering.eps = detail::opt_double(j.at("clustering").at("eps"));
  c.clustering.eps_floor = j.at("clustering").at("eps_floor");
  c.clustering.eps_quantile = j.at("clustering").at("eps_quantile");
  if (!j.at("clustering").at("min_pts").is_null()) c.clustering.min_pts = j.at("clustering").at("min_pts").get<std::size_t>();
  c.align.threshold = detail::opt_double(j.at("align").at("threshold"));
  c.align.adaptive_scale = j.at("align").at("adaptive_scale");
  c.align.fallback_threshold = j.at("align").at("fallback_threshold");
  c.consistency.top_fraction = j.at("consistency").at("top_fraction");
  c.consistency.bottom_fraction = j.at("consistency").at("bottom_fraction");
  c.mode = j.at("mode").get<std::string>() == "with-expert" ? ExpertMode::WithExpert : ExpertMode::NoExpert;
  c.oracle_expert = j.at("oracle_expert");
  c.seed = j.at("seed");
  return c;
}

inline nlohmann::json to_json(const PipelineState& s) {
  const auto& b = s.bundle;
  nlohmann::json labeled = nlohmann::json::array();
  for (const auto& lr : b.labeled) labeled.push_back({{"r", detail::record_json(lr.record)}, {"label", lr.label}});
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : s.queue.groups())
    groups.push_back({{"gid", g.gid},
                      {"step", g.step},
                      {"cluster", g.cluster},
                      {"samples", detail::records_json(g.samples)},
                      {"mean_confidence", g.mean_confidence},
                      {"distance_to_nearest", g.distance_to_nearest},
                      {"status", to_string(g.status)},
                      {"verdict", detail::verdict_json(g.verdict)}});
  nlohmann::json pseudo = nlohmann::json::array();
  for (const auto& p : s.pseudo_labels) pseudo.push_back({p.id, p.cls, p.step});
  nlohmann::json truth = nlohmann::json::array();
  for (const auto& [id, name] : b.truth) truth.push_back({id, name});

  return {{"format", "m3s-pipeline"},
          {"version", kCheckpointVersion},
          {"step", s.step},
          {"config", to_json(s.config)},
          {"bundle",
           {{"dim", b.dim},
            {"labeled", std::move(labeled)},
            {"unlabeled", detail::records_json(b.unlabeled)},
            {"validation", detail::records_json(b.validation)},
            {"test", detail::records_json(b.test)},
            {"label_set", {{"names", b.label_set.names()}, {"version", b.label_set.version()}}},
            {"truth", std::move(truth)},
            {"standardizer", {{"mean", b.standardizer.mean}, {"scale", b.standardizer.scale}}}}},
          {"model", to_json(s.model)},
          {"queue", std::move(groups)},
          {"final_unknown", detail::records_json(s.final_unknown)},
          {"pseudo_labels", std::move(pseudo)},
          {"expert_labeled", s.expert_labeled},
          {"initial_pool", s.initial_pool},
          {"quiet_steps", s.quiet_steps},
          {"confidence_cutoff", detail::opt_json(s.confidence_cutoff)},
          {"align_threshold", s.align_threshold}};
}

inline PipelineState pipeline_state_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "m3s-pipeline") throw CorruptionError("not a pipeline checkpoint");
    const int v = j.at("version").get<int>();
    if (v != kCheckpointVersion)
      throw CorruptionError("checkpoint version " + std::to_string(v) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    PipelineState s;
    s.step = j.at("step");
    s.config = pipeline_config_from_json(j.at("config"));
    const auto& jb = j.at("bundle");
    auto& b = s.bundle;
    b.dim = jb.at("dim");
    b.label_set = LabelSet(jb.at("label_set").at("names").get<std::vector<std::string>>(),
                           jb.at("label_set").at("version").get<std::uint64_t>());
    for (const auto& e : jb.at("labeled")) b.labeled.push_back({detail::record_from(e.at("r")), e.at("label").get<int>()});
    b.unlabeled = detail::records_from(jb.at("unlabeled"));
    b.validation = detail::records_from(jb.at("validation"));
    b.test = detail::records_from(jb.at("test"));
    for (const auto& e : jb.at("truth")) b.truth[e.at(0).get<SampleId>()] = e.at(1).get<std::string>();
    b.standardizer.mean = jb.at("standardizer").at("mean").get<Vec>();
    b.standardizer.scale = jb.at("standardizer").at("scale").get<Vec>();
    s.model = classifier_from_json(j.at("model"));
    for (const auto& g : j.at("queue")) {
      ExpertGroup eg;
      eg.step = g.at("step");
      eg.cluster = g.at("cluster");
      eg.samples = detail::records_from(g.at("samples"));
      eg.mean_confidence = g.at("mean_confidence");
      eg.distance_to_nearest = g.at("distance_to_nearest");
      const int gid = g.at("gid");
      // Re-adding keeps gid = position; restore status afterwards.
      ExpertGroup copy = eg;
      const auto status = detail::status_from(g.at("status").get<std::string>());
      auto verdict = detail::verdict_from(g.at("verdict"));
      s.queue.groups().push_back(std::move(copy));
      auto& back = s.queue.groups().back();
      back.gid = gid;
      back.status = status;
      back.verdict = std::move(verdict);
      if (gid != static_cast<int>(s.queue.groups().size()) - 1) throw CorruptionError("expert group ids are not contiguous");
    }
    s.final_unknown = detail::records_from(j.at("final_unknown"));
    for (const auto& p : j.at("pseudo_labels")) s.pseudo_labels.push_back({p.at(0).get<SampleId>(), p.at(1).get<int>(), p.at(2).get<std::size_t>()});
    s.expert_labeled = j.at("expert_labeled");
    s.initial_pool = j.at("initial_pool");
    s.quiet_steps = j.at("quiet_steps");
    s.confidence_cutoff = detail::opt_double(j.at("confidence_cutoff"));
    s.align_threshold = j.at("align_threshold");
    if (s.model.num_classes() != b.label_set.size()) throw CorruptionError("model outputs do not match the label set");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed pipeline checkpoint: ") + e.what());
  }
}

inline void checkpoint(const PipelineState& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("cannot write checkpoint '" + path + "'");
  out << to_json(s).dump() << '\n';
  if (!out) throw StateError("failed writing checkpoint '" + path + "'");
}

inline PipelineState restore(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("corrupt checkpoint '" + path + "': " + e.what());
  }
  return pipeline_state_from_json(j);
}

}  // namespace m3s
