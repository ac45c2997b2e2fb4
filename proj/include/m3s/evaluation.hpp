#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3s/alignment.hpp"
#include "m3s/classifier.hpp"
#include "m3s/dataset.hpp"
#include "m3s/updater.hpp"

namespace m3s {

inline const std::string kUnknownClass = "Unknown";

// Counts indexed by true class (rows) and predicted class (columns).
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  ConfusionMatrix(std::vector<std::string> rows, std::vector<std::string> cols)
      : rows_(std::move(rows)), cols_(std::move(cols)), counts_(rows_.size(), std::vector<std::size_t>(cols_.size(), 0)) {}

  // Square matrix over the same labels on both axes.
  explicit ConfusionMatrix(std::vector<std::string> labels) : ConfusionMatrix(labels, labels) {}

  void add(const std::string& truth, const std::string& predicted, std::size_t n = 1) {
    counts_[index(rows_, truth, "true")][index(cols_, predicted, "predicted")] += n;
  }

  const std::vector<std::string>& rows() const { return rows_; }
  const std::vector<std::string>& cols() const { return cols_; }
  std::size_t at(std::size_t r, std::size_t c) const { return counts_[r][c]; }
  std::size_t count(const std::string& truth, const std::string& predicted) const {
    return counts_[index(rows_, truth, "true")][index(cols_, predicted, "predicted")];
  }

  std::size_t row_total(std::size_t r) const {
    std::size_t s = 0;
    for (auto v : counts_[r]) s += v;
    return s;
  }
  std::size_t col_total(std::size_t c) const {
    std::size_t s = 0;
    for (const auto& row : counts_) s += row[c];
    return s;
  }
  std::size_t total() const {
    std::size_t s = 0;
    for (std::size_t r = 0; r < rows_.size(); ++r) s += row_total(r);
    return s;
  }

  // Row-normalized view; empty rows stay zero.
  std::vector<std::vector<double>> normalized() const {
    std::vector<std::vector<double>> out(rows_.size(), std::vector<double>(cols_.size(), 0.0));
    for (std::size_t r = 0; r < rows_.size(); ++r) {
      const double t = static_cast<double>(row_total(r));
      if (t == 0) continue;
      for (std::size_t c = 0; c < cols_.size(); ++c) out[r][c] = static_cast<double>(counts_[r][c]) / t;
    }
    return out;
  }

  // Fraction of a true class predicted as `predicted`.
  double rate(const std::string& truth, const std::string& predicted) const {
    const std::size_t r = index(rows_, truth, "true");
    const double t = static_cast<double>(row_total(r));
    return t == 0 ? 0.0 : static_cast<double>(counts_[r][index(cols_, predicted, "predicted")]) / t;
  }

  bool has_row(const std::string& name) const { return std::find(rows_.begin(), rows_.end(), name) != rows_.end(); }

  nlohmann::json to_json() const {
    return {{"rows", rows_}, {"cols", cols_}, {"counts", counts_}, {"normalized", normalized()}};
  }

 private:
  static std::size_t index(const std::vector<std::string>& names, const std::string& n, const char* axis) {
    const auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw DataError(std::string("class '") + n + "' is not a " + axis + " label of the matrix");
    return static_cast<std::size_t>(it - names.begin());
  }

  std::vector<std::string> rows_;
  std::vector<std::string> cols_;
  std::vector<std::vector<std::size_t>> counts_;
};

struct MetricSet {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
};

inline nlohmann::json to_json(const MetricSet& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"fpr", m.fpr}};
}

// Accuracy plus macro precision, recall and FPR over every class that occurs
// as a true or a predicted label. Precision of a never-predicted class is 0.
inline MetricSet compute_metrics(const ConfusionMatrix& cm) {
  if (cm.rows() != cm.cols()) throw DataError("metrics need a square confusion matrix");
  const std::size_t total = cm.total();
  if (total == 0) throw DataError("metrics over an empty confusion matrix");
  MetricSet m;
  std::size_t trace = 0, active = 0;
  for (std::size_t c = 0; c < cm.rows().size(); ++c) {
    const std::size_t tp = cm.at(c, c);
    trace += tp;
    const std::size_t support = cm.row_total(c);
    const std::size_t predicted = cm.col_total(c);
    if (support == 0 && predicted == 0) continue;
    ++active;
    const std::size_t fp = predicted - tp;
    const std::size_t fn = support - tp;
    const std::size_t tn = total - tp - fp - fn;
    m.precision += predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
    m.recall += support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(support);
    m.fpr += (fp + tn) == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(fp + tn);
  }
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  const double k = static_cast<double>(active);
  m.precision /= k;
  m.recall /= k;
  m.fpr /= k;
  return m;
}

// Test-time unknown rule: a sample is Unknown when its confidence is at or
// below the last bottom-band cutoff and its embedding lies at least
// `threshold` (squared) from every class centroid.
struct UnknownRule {
  bool enabled = false;
  double confidence_cutoff = 0.0;
  double threshold = 0.0;
  ClassCentroids centroids;

  bool fires(double conf, std::span<const double> embedding) const {
    if (!enabled || centroids.size() == 0) return false;
    if (conf > confidence_cutoff) return false;
    return nearest_class(embedding, centroids).second >= threshold;
  }
};

struct Prediction {
  SampleId id = 0;
  std::string truth;
  std::string predicted;
  double confidence = 0.0;
};

struct EvalResult {
  ConfusionMatrix matrix;    // LabelSet + Unknown on both axes
  ConfusionMatrix detailed;  // raw true class x predicted
  MetricSet metrics;
  std::vector<Prediction> predictions;
};

// Scores the model on labeled test records. True classes outside the label
// set count as Unknown.
inline EvalResult evaluate(const Classifier& model, std::span<const FlowRecord> test, const LabelSet& labels,
                           const UnknownRule& rule = {}) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  if (model.num_classes() != labels.size()) throw StateError("model outputs do not match the label set");
  std::vector<std::string> square = labels.names();
  square.push_back(kUnknownClass);

  std::vector<std::string> raw;
  for (const auto& r : test) {
    if (!r.true_label) throw DataError("test record " + std::to_string(r.id) + " has no label");
    if (std::find(raw.begin(), raw.end(), *r.true_label) == raw.end()) raw.push_back(*r.true_label);
  }
  std::sort(raw.begin(), raw.end());

  EvalResult out{ConfusionMatrix(square), ConfusionMatrix(raw, square), {}, {}};
  out.predictions.reserve(test.size());
  for (const auto& r : test) {
    const auto f = model.forward(r.features);
    const double conf = confidence(f.probs);
    const std::string pred = rule.fires(conf, f.embedding) ? kUnknownClass : labels.name(argmax(f.probs));
    const std::string truth = labels.contains(*r.true_label) ? *r.true_label : kUnknownClass;
    out.matrix.add(truth, pred);
    out.detailed.add(*r.true_label, pred);
    out.predictions.push_back({r.id, *r.true_label, pred, conf});
  }
  out.metrics = compute_metrics(out.matrix);
  return out;
}

}  // namespace m3s
