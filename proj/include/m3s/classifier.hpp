#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3s/common.hpp"

namespace m3s {

// Numerically stable softmax (max-shifted).
inline Vec softmax(std::span<const double> z) {
  if (z.empty()) throw DimensionError("softmax of an empty vector");
  const double mx = *std::max_element(z.begin(), z.end());
  Vec p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

enum class Activation { ReLU, Tanh, Identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::ReLU: return x > 0.0 ? x : 0.0;
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Derivative expressed through the pre-activation value.
inline double activate_grad(Activation a, double pre) {
  switch (a) {
    case Activation::ReLU: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(pre);
      return 1.0 - t * t;
    }
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// Fully connected layer, weights stored row-major (out x in).
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  Vec w;
  Vec b;

  double& weight(std::size_t r, std::size_t c) { return w[r * in + c]; }
  double weight(std::size_t r, std::size_t c) const { return w[r * in + c]; }

  void apply(std::span<const double> x, Vec& y) const {
    y.assign(out, 0.0);
    for (std::size_t r = 0; r < out; ++r) {
      const double* row = &w[r * in];
      double s = b[r];
      for (std::size_t c = 0; c < in; ++c) s += row[c] * x[c];
      y[r] = s;
    }
  }

  bool operator==(const Dense&) const = default;
};

inline void init_uniform_fan_in(Dense& layer, Rng& rng, std::size_t first_row = 0) {
  const double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
  for (std::size_t r = first_row; r < layer.out; ++r) {
    for (std::size_t c = 0; c < layer.in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
    layer.b[r] = 0.0;
  }
}

struct NetworkShape {
  std::size_t input = 0;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t embedding = 32;
  std::size_t classes = 0;
  Activation activation = Activation::ReLU;
};

struct ForwardResult {
  Vec embedding;
  Vec logits;
  Vec probs;
};

// input -> hidden (activation) ... -> embedding (linear) -> logits.
class Classifier {
 public:
  Classifier() = default;

  static Classifier create(const NetworkShape& shape, std::uint64_t seed) {
    Classifier c = zeros(shape);
    Rng rng(seed);
    for (auto& l : c.layers_) init_uniform_fan_in(l, rng);
    return c;
  }

  static Classifier zeros(const NetworkShape& shape) {
    if (shape.input == 0 || shape.embedding == 0 || shape.classes == 0)
      throw ConfigError("network dimensions must be positive");
    Classifier c;
    c.activation_ = shape.activation;
    std::size_t prev = shape.input;
    auto push = [&](std::size_t out) {
      c.layers_.push_back(Dense{prev, out, Vec(prev * out, 0.0), Vec(out, 0.0)});
      prev = out;
    };
    for (std::size_t h : shape.hidden) {
      if (h == 0) throw ConfigError("hidden layer width must be positive");
      push(h);
    }
    push(shape.embedding);
    push(shape.classes);
    return c;
  }

  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t embedding_dim() const { return layers_[layers_.size() - 2].out; }
  std::size_t num_classes() const { return layers_.back().out; }
  std::size_t num_hidden() const { return layers_.size() - 2; }
  Activation activation() const { return activation_; }

  std::uint64_t label_version() const { return label_version_; }
  void set_label_version(std::uint64_t v) { label_version_ = v; }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.w.size() + l.b.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!m3s::all_finite(l.w) || !m3s::all_finite(l.b)) return false;
    return true;
  }

  ForwardResult forward(std::span<const double> x) const {
    check_input(x);
    Vec a(x.begin(), x.end()), z;
    const std::size_t n_hidden = num_hidden();
    for (std::size_t i = 0; i < n_hidden; ++i) {
      layers_[i].apply(a, z);
      for (auto& v : z) v = activate(activation_, v);
      a.swap(z);
    }
    ForwardResult out;
    layers_[n_hidden].apply(a, out.embedding);
    layers_.back().apply(out.embedding, out.logits);
    out.probs = softmax(out.logits);
    return out;
  }

  Vec embed(std::span<const double> x) const { return forward(x).embedding; }

  bool operator==(const Classifier&) const = default;

 private:
  void check_input(std::span<const double> x) const {
    if (x.size() != input_dim())
      throw DimensionError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                           std::to_string(input_dim()));
  }

  std::vector<Dense> layers_;
  Activation activation_ = Activation::ReLU;
  std::uint64_t label_version_ = 0;
};

struct Example {
  Vec x;
  int y = 0;
};

// Gradient of the mean cross-entropy; same layout as Classifier::layers().
struct Gradient {
  std::vector<Dense> layers;
  double loss = 0.0;
};

inline void check_labels(const Classifier& model, std::span<const Example> batch) {
  const auto k = static_cast<int>(model.num_classes());
  for (std::size_t i = 0; i < batch.size(); ++i)
    if (batch[i].y < 0 || batch[i].y >= k)
      throw ConfigError("label " + std::to_string(batch[i].y) + " of example " + std::to_string(i) +
                        " is outside [0, " + std::to_string(k) + ")");
}

inline double cross_entropy(std::span<const double> probs, int y) {
  return -std::log(std::max(probs[static_cast<std::size_t>(y)], std::numeric_limits<double>::min()));
}

inline double mean_loss(const Classifier& model, std::span<const Example> batch) {
  if (batch.empty()) throw ConfigError("loss over an empty batch");
  double s = 0.0;
  for (const auto& e : batch) s += cross_entropy(model.forward(e.x).probs, e.y);
  return s / static_cast<double>(batch.size());
}

// Backpropagation of the batch-mean cross-entropy.
inline Gradient loss_gradient(const Classifier& model, std::span<const Example> batch) {
  if (batch.empty()) throw ConfigError("gradient over an empty batch");
  check_labels(model, batch);
  const auto& layers = model.layers();
  const std::size_t L = layers.size();
  const std::size_t n_hidden = model.num_hidden();
  const Activation act = model.activation();

  Gradient g;
  g.layers.reserve(L);
  for (const auto& l : layers) g.layers.push_back(Dense{l.in, l.out, Vec(l.w.size(), 0.0), Vec(l.b.size(), 0.0)});

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<Vec> inputs(L), pre(L);
  Vec delta, prev_delta;
  for (const auto& ex : batch) {
    if (ex.x.size() != model.input_dim()) throw DimensionError("example dimension mismatch");
    Vec a = ex.x;
    for (std::size_t i = 0; i < L; ++i) {
      inputs[i] = a;
      layers[i].apply(a, pre[i]);
      a = pre[i];
      if (i < n_hidden)
        for (auto& v : a) v = activate(act, v);
    }
    const Vec p = softmax(pre[L - 1]);
    g.loss += cross_entropy(p, ex.y) * inv_n;

    delta = p;
    delta[static_cast<std::size_t>(ex.y)] -= 1.0;
    for (auto& v : delta) v *= inv_n;

    for (std::size_t li = L; li-- > 0;) {
      const Dense& layer = layers[li];
      Dense& gl = g.layers[li];
      const Vec& in = inputs[li];
      for (std::size_t r = 0; r < layer.out; ++r) {
        gl.b[r] += delta[r];
        double* grow = &gl.w[r * layer.in];
        for (std::size_t c = 0; c < layer.in; ++c) grow[c] += delta[r] * in[c];
      }
      if (li == 0) break;
      prev_delta.assign(layer.in, 0.0);
      for (std::size_t r = 0; r < layer.out; ++r) {
        const double* row = &layer.w[r * layer.in];
        for (std::size_t c = 0; c < layer.in; ++c) prev_delta[c] += row[c] * delta[r];
      }
      // The layer below feeds this one through the activation unless it is
      // the (linear) embedding layer.
      if (li - 1 < n_hidden)
        for (std::size_t c = 0; c < layer.in; ++c) prev_delta[c] *= activate_grad(act, pre[li - 1][c]);
      delta.swap(prev_delta);
    }
  }
  return g;
}

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::size_t patience = 10;
  double weight_decay = 0.0;  // L2 penalty on weights (not biases)
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch_size == 0 || patience == 0 || !(learning_rate > 0.0))
      throw ConfigError("training parameters must be positive");
    if (patience > epochs) throw ConfigError("patience must not exceed epochs");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  }
};

struct TrainResult {
  Classifier model;
  std::vector<double> epoch_losses;  // mean mini-batch loss per epoch
  std::size_t best_epoch = 0;
  bool stopped_early = false;

  double initial_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.front(); }
  double final_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
};

// Mini-batch SGD on the mean cross-entropy. With a non-empty validation set,
// training stops after `patience` epochs without a strict improvement of the
// validation loss and the best checkpoint is returned.
inline TrainResult train(Classifier model, std::span<const Example> data, const TrainConfig& cfg,
                         std::span<const Example> validation = {}) {
  cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  check_labels(model, data);
  check_labels(model, validation);

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<Example> batch;

  TrainResult result;
  std::optional<Classifier> best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const Gradient g = loss_gradient(model, batch);
      if (!std::isfinite(g.loss))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(n_batches));
      auto& layers = model.layers();
      bool finite = true;
      for (std::size_t li = 0; li < layers.size(); ++li) {
        for (std::size_t k = 0; k < layers[li].w.size(); ++k) {
          layers[li].w[k] -= cfg.learning_rate * (g.layers[li].w[k] + cfg.weight_decay * layers[li].w[k]);
          finite &= std::isfinite(layers[li].w[k]);
        }
        for (std::size_t k = 0; k < layers[li].b.size(); ++k) {
          layers[li].b[k] -= cfg.learning_rate * g.layers[li].b[k];
          finite &= std::isfinite(layers[li].b[k]);
        }
      }
      if (!finite)
        throw TrainingError("parameters diverged at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(n_batches));
      epoch_loss += g.loss;
      ++n_batches;
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n_batches));

    if (!validation.empty()) {
      const double v = mean_loss(model, validation);
      if (v < best_val) {
        best_val = v;
        best = model;
        result.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        result.stopped_early = true;
        break;
      }
    } else {
      result.best_epoch = epoch;
    }
  }
  result.model = best ? std::move(*best) : std::move(model);
  return result;
}

// Grows the logits layer to new_k classes; existing rows and every other
// layer are left untouched.
inline Classifier expand_output(Classifier model, std::size_t new_k, std::uint64_t seed) {
  const std::size_t k = model.num_classes();
  if (new_k <= k)
    throw ConfigError("expand_output: new class count " + std::to_string(new_k) + " must exceed " + std::to_string(k));
  Dense& out = model.layers().back();
  out.w.resize(new_k * out.in, 0.0);
  out.b.resize(new_k, 0.0);
  out.out = new_k;
  Rng rng(seed);
  init_uniform_fan_in(out, rng, k);
  return model;
}

inline nlohmann::json to_json(const Classifier& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : model.layers())
    layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}});
  return {{"format", "m3s-classifier"},
          {"version", 1},
          {"activation", to_string(model.activation())},
          {"label_version", model.label_version()},
          {"layers", std::move(layers)}};
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "m3s-classifier") throw CorruptionError("not a classifier checkpoint");
    if (j.at("version").get<int>() != 1)
      throw CorruptionError("unsupported classifier checkpoint version " + j.at("version").dump());
    const auto& jl = j.at("layers");
    if (jl.size() < 3) throw CorruptionError("classifier checkpoint needs at least three layers");
    NetworkShape shape;
    shape.activation = activation_from_string(j.at("activation").get<std::string>());
    shape.input = jl.front().at("in").get<std::size_t>();
    shape.hidden.clear();
    for (std::size_t i = 0; i + 2 < jl.size(); ++i) shape.hidden.push_back(jl[i].at("out").get<std::size_t>());
    shape.embedding = jl[jl.size() - 2].at("out").get<std::size_t>();
    shape.classes = jl.back().at("out").get<std::size_t>();
    Classifier c = Classifier::zeros(shape);
    for (std::size_t i = 0; i < jl.size(); ++i) {
      Dense& l = c.layers()[i];
      if (jl[i].at("in").get<std::size_t>() != l.in) throw CorruptionError("layer dimensions do not chain");
      auto w = jl[i].at("w").get<Vec>();
      auto b = jl[i].at("b").get<Vec>();
      if (w.size() != l.w.size() || b.size() != l.b.size())
        throw CorruptionError("layer " + std::to_string(i) + " parameter count mismatch");
      l.w = std::move(w);
      l.b = std::move(b);
    }
    c.set_label_version(j.at("label_version").get<std::uint64_t>());
    if (!c.all_finite()) throw CorruptionError("classifier checkpoint holds non-finite parameters");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed classifier checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("malformed classifier checkpoint: ") + e.what());
  }
}

inline void save_classifier(const Classifier& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw StateError("cannot write '" + path + "'");
  out << to_json(model).dump() << '\n';
}

inline Classifier load_classifier(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw StateError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("corrupt classifier checkpoint: ") + e.what());
  }
  return classifier_from_json(j);
}

}  // namespace m3s
