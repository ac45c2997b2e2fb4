#pragma once

#include <algorithm>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3s/dataset.hpp"
#include "m3s/evaluation.hpp"
#include "m3s/pipeline.hpp"

namespace m3s {

struct ExperimentResult {
  ExperimentSetting setting;
  std::vector<StepReport> reports;
  EvalResult eval;
  LabelSet final_labels;
  double known_accuracy = 0.0;   // test samples of initially known classes predicted correctly
  double unknown_recall = 0.0;   // test samples of unknown classes predicted Unknown
  double class_accuracy = 0.0;   // mean per-true-class diagonal rate
  double pseudo_label_precision = 1.0;
  std::size_t pseudo_labels = 0;
  double expert_proportion = 0.0;
  std::size_t steps = 0;
};

inline void summarize(ExperimentResult& r, const PipelineState& s) {
  const auto& det = r.eval.detailed;
  const std::set<std::string> known(r.setting.known_classes.begin(), r.setting.known_classes.end());
  std::size_t kn = 0, kc = 0, un = 0, uc = 0;
  for (const auto& p : r.eval.predictions) {
    if (known.count(p.truth)) {
      ++kn;
      kc += p.predicted == p.truth;
    } else {
      ++un;
      uc += p.predicted == kUnknownClass;
    }
  }
  r.known_accuracy = kn ? static_cast<double>(kc) / static_cast<double>(kn) : 0.0;
  r.unknown_recall = un ? static_cast<double>(uc) / static_cast<double>(un) : 0.0;

  double diag = 0.0;
  std::size_t rows = 0;
  for (const auto& name : det.rows()) {
    const bool predictable = std::find(det.cols().begin(), det.cols().end(), name) != det.cols().end();
    diag += predictable ? det.rate(name, name) : 0.0;
    ++rows;
  }
  r.class_accuracy = rows ? diag / static_cast<double>(rows) : 0.0;

  std::size_t correct = 0;
  for (const auto& p : s.pseudo_labels) {
    const auto it = s.bundle.truth.find(p.id);
    if (it != s.bundle.truth.end() && it->second == s.bundle.label_set.name(static_cast<std::size_t>(p.cls))) ++correct;
  }
  r.pseudo_labels = s.pseudo_labels.size();
  r.pseudo_label_precision =
      s.pseudo_labels.empty() ? 1.0 : static_cast<double>(correct) / static_cast<double>(s.pseudo_labels.size());
  r.expert_proportion = s.expert_proportion();
  r.final_labels = s.bundle.label_set;
  r.steps = s.step;
}

// Builds the bundle, runs the pipeline to its stop rule and scores the final
// model. The setting's seed and expert mode override the config's.
inline ExperimentResult run_experiment(const FlowDataset& data, const ExperimentSetting& setting, PipelineConfig cfg,
                                       const StopRule& stop, const StepCallback& on_step = {}) {
  cfg.mode = setting.expert_mode;
  cfg.seed = setting.seed;
  PipelineState state = make_state(make_setting_bundle(data, setting), cfg);
  ExperimentResult r;
  r.setting = setting;
  r.reports = run(state, stop, on_step);
  r.eval = evaluate_state(state);
  summarize(r, state);
  return r;
}

enum class SweepAxis { KnownFraction, KnownClasses, UnknownClasses };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::KnownFraction: return "known_fraction";
    case SweepAxis::KnownClasses: return "n_known_classes";
    case SweepAxis::UnknownClasses: return "n_unknown_classes";
  }
  return "?";
}

inline SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "known_fraction") return SweepAxis::KnownFraction;
  if (s == "n_known_classes") return SweepAxis::KnownClasses;
  if (s == "n_unknown_classes") return SweepAxis::UnknownClasses;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "'");
}

struct SweepRow {
  double value = 0.0;
  ExperimentResult result;
};

// Setting and record subset for one sweep point. Class-count axes take
// classes in the base setting's order (known first, then unknown).
inline std::pair<FlowDataset, ExperimentSetting> sweep_point(const FlowDataset& data, const ExperimentSetting& base,
                                                            SweepAxis axis, double value) {
  ExperimentSetting s = base;
  FlowDataset d = data;
  std::vector<std::string> order = base.known_classes;
  order.insert(order.end(), base.unknown_classes.begin(), base.unknown_classes.end());
  switch (axis) {
    case SweepAxis::KnownFraction:
      s.known_fraction = value;
      break;
    case SweepAxis::KnownClasses: {
      const auto n = static_cast<std::size_t>(value);
      if (value != static_cast<double>(n) || n < 1 || n > order.size())
        throw ConfigError("n_known_classes must be an integer in [1, " + std::to_string(order.size()) + "]");
      s.known_classes.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
      s.unknown_classes.assign(order.begin() + static_cast<std::ptrdiff_t>(n), order.end());
      break;
    }
    case SweepAxis::UnknownClasses: {
      const auto n = static_cast<std::size_t>(value);
      if (value != static_cast<double>(n) || n > base.unknown_classes.size())
        throw ConfigError("n_unknown_classes must be an integer in [0, " + std::to_string(base.unknown_classes.size()) + "]");
      s.unknown_classes.assign(base.unknown_classes.begin(), base.unknown_classes.begin() + static_cast<std::ptrdiff_t>(n));
      std::set<std::string> keep(s.known_classes.begin(), s.known_classes.end());
      keep.insert(s.unknown_classes.begin(), s.unknown_classes.end());
      std::erase_if(d.records, [&](const FlowRecord& r) { return !r.true_label || !keep.count(*r.true_label); });
      break;
    }
  }
  return {std::move(d), std::move(s)};
}

inline std::vector<SweepRow> sweep(const FlowDataset& data, const ExperimentSetting& base, SweepAxis axis,
                                   const std::vector<double>& values, const PipelineConfig& cfg, const StopRule& stop) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    auto [d, s] = sweep_point(data, base, axis, v);
    rows.push_back({v, run_experiment(d, s, cfg, stop)});
  }
  return rows;
}

inline nlohmann::json to_json(const ExperimentResult& r) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& rep : r.reports) reports.push_back(to_json(rep));
  return {{"known_classes", r.setting.known_classes},
          {"unknown_classes", r.setting.unknown_classes},
          {"known_fraction", r.setting.known_fraction},
          {"mode", r.setting.expert_mode == ExpertMode::WithExpert ? "with-expert" : "no-expert"},
          {"seed", r.setting.seed},
          {"steps", r.steps},
          {"metrics", to_json(r.eval.metrics)},
          {"known_accuracy", r.known_accuracy},
          {"unknown_recall", r.unknown_recall},
          {"class_accuracy", r.class_accuracy},
          {"pseudo_labels", r.pseudo_labels},
          {"pseudo_label_precision", r.pseudo_label_precision},
          {"expert_proportion", r.expert_proportion},
          {"final_labels", r.final_labels.names()},
          {"confusion", r.eval.matrix.to_json()},
          {"confusion_detailed", r.eval.detailed.to_json()},
          {"reports", std::move(reports)}};
}

inline const char* kSweepHeader =
    "axis,value,accuracy,precision,recall,fpr,known_accuracy,unknown_recall,class_accuracy,expert_proportion,steps";

inline void write_sweep_table(std::ostream& out, SweepAxis axis, const std::vector<SweepRow>& rows) {
  out << kSweepHeader << '\n';
  const auto flags = out.flags();
  const auto prec = out.precision(6);
  for (const auto& row : rows) {
    const auto& r = row.result;
    const auto& m = r.eval.metrics;
    out << to_string(axis) << ',' << row.value << ',' << m.accuracy << ',' << m.precision << ',' << m.recall << ','
        << m.fpr << ',' << r.known_accuracy << ',' << r.unknown_recall << ',' << r.class_accuracy << ','
        << r.expert_proportion << ',' << r.steps << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

// Plot-ready series: one array per metric, aligned with `values`.
inline nlohmann::json sweep_series(SweepAxis axis, const std::vector<SweepRow>& rows) {
  nlohmann::json j{{"axis", to_string(axis)}};
  for (const auto& row : rows) {
    const auto& r = row.result;
    j["values"].push_back(row.value);
    j["accuracy"].push_back(r.eval.metrics.accuracy);
    j["precision"].push_back(r.eval.metrics.precision);
    j["recall"].push_back(r.eval.metrics.recall);
    j["fpr"].push_back(r.eval.metrics.fpr);
    j["known_accuracy"].push_back(r.known_accuracy);
    j["unknown_recall"].push_back(r.unknown_recall);
    j["expert_proportion"].push_back(r.expert_proportion);
  }
  return j;
}

}  // namespace m3s
