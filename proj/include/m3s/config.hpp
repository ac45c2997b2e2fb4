#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "m3s/dataset.hpp"
#include "m3s/pipeline.hpp"

namespace m3s {

// Every knob of a run, resolved from a flat JSON object (see README for the
// key list). Unknown keys are rejected so that typos do not pass silently.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string data;
  std::string out = "m3s-out";
  std::string mode = "no-expert";  // no-expert | with-expert | interactive
  std::string setting;             // "iscxtor1", "iscxtor2" or empty
  std::vector<std::string> known_classes;
  std::vector<std::string> unknown_classes;
  double known_fraction = 0.30;
  double split_train = 0.6;
  double split_val = 0.2;
  double split_test = 0.2;
  std::size_t max_steps = 15;
  std::size_t quiescent_steps = 2;
  int port = 8080;
  PipelineConfig pipeline;

  ExpertMode expert_mode() const { return mode == "no-expert" ? ExpertMode::NoExpert : ExpertMode::WithExpert; }

  void validate() const {
    if (mode != "no-expert" && mode != "with-expert" && mode != "interactive")
      throw ConfigError("mode must be no-expert, with-expert or interactive");
    if (!setting.empty() && setting != "iscxtor1" && setting != "iscxtor2")
      throw ConfigError("setting must be iscxtor1 or iscxtor2");
    if (port <= 0 || port > 65535) throw ConfigError("port must lie in 1..65535");
    pipeline.validate();
    stop_rule().validate();
  }

  StopRule stop_rule() const { return StopRule{max_steps, quiescent_steps}; }

  // Known/unknown classes: an explicit list wins, then a named setting, then
  // the first three classes (by name) become known.
  ExperimentSetting experiment_setting(const FlowDataset& data_set) const {
    ExperimentSetting s;
    if (!known_classes.empty()) {
      s.known_classes = known_classes;
      s.unknown_classes = unknown_classes;
      if (s.unknown_classes.empty()) {
        for (const auto& [name, _] : class_counts(data_set.records))
          if (std::find(s.known_classes.begin(), s.known_classes.end(), name) == s.known_classes.end())
            s.unknown_classes.push_back(name);
      }
    } else if (setting == "iscxtor1" || setting == "iscxtor2") {
      s = iscxtor_setting(setting == "iscxtor1" ? 1 : 2);
    } else {
      std::size_t i = 0;
      for (const auto& [name, _] : class_counts(data_set.records))
        (i++ < 3 ? s.known_classes : s.unknown_classes).push_back(name);
    }
    s.known_fraction = known_fraction;
    s.split = SplitRatio{split_train, split_val, split_test};
    s.expert_mode = expert_mode();
    s.seed = seed;
    return s;
  }

  PipelineConfig resolved_pipeline() const {
    PipelineConfig p = pipeline;
    p.seed = seed;
    p.mode = expert_mode();
    p.oracle_expert = mode == "with-expert";
    return p;
  }
};

namespace detail {
template <typename T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null())
    out.reset();
  else
    out = j.at(key).get<T>();
}
}  // namespace detail

// Applies the keys present in `j` on top of `c`.
inline void apply_config_json(RunConfig& c, const nlohmann::json& j) {
  static const std::vector<std::string> known_keys = {
      "seed", "data", "out", "mode", "setting", "known_classes", "unknown_classes", "known_fraction",
      "split", "max_steps", "quiescent_steps", "port", "hidden", "embedding", "activation", "epochs",
      "batch_size", "learning_rate", "patience", "weight_decay", "warm_start", "eps", "min_pts",
      "eps_floor", "eps_quantile", "align_threshold", "align_scale", "align_fallback", "top_fraction", "bottom_fraction"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known_keys.begin(), known_keys.end(), key) == known_keys.end())
      throw ConfigError("unknown config key '" + key + "'");
  try {
    auto& p = c.pipeline;
    if (j.contains("seed")) c.seed = j.at("seed");
    if (j.contains("data")) c.data = j.at("data");
    if (j.contains("out")) c.out = j.at("out");
    if (j.contains("mode")) c.mode = j.at("mode");
    if (j.contains("setting")) c.setting = j.at("setting");
    if (j.contains("known_classes")) c.known_classes = j.at("known_classes").get<std::vector<std::string>>();
    if (j.contains("unknown_classes")) c.unknown_classes = j.at("unknown_classes").get<std::vector<std::string>>();
    if (j.contains("known_fraction")) c.known_fraction = j.at("known_fraction");
    if (j.contains("split")) {
      const auto s = j.at("split").get<std::vector<double>>();
      if (s.size() != 3) throw ConfigError("split must hold three ratios");
      c.split_train = s[0];
      c.split_val = s[1];
      c.split_test = s[2];
    }
    if (j.contains("max_steps")) c.max_steps = j.at("max_steps");
    if (j.contains("quiescent_steps")) c.quiescent_steps = j.at("quiescent_steps");
    if (j.contains("port")) c.port = j.at("port");
    if (j.contains("hidden")) p.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    if (j.contains("embedding")) p.embedding = j.at("embedding");
    if (j.contains("activation")) p.activation = activation_from_string(j.at("activation").get<std::string>());
    if (j.contains("epochs")) p.train.epochs = j.at("epochs");
    if (j.contains("batch_size")) p.train.batch_size = j.at("batch_size");
    if (j.contains("learning_rate")) p.train.learning_rate = j.at("learning_rate");
    if (j.contains("patience")) p.train.patience = j.at("patience");
    if (j.contains("weight_decay")) p.train.weight_decay = j.at("weight_decay");
    if (j.contains("warm_start")) p.warm_start = j.at("warm_start");
    detail::read_opt(j, "eps", p.clustering.eps);
    detail::read_opt(j, "min_pts", p.clustering.min_pts);
    if (j.contains("eps_floor")) p.clustering.eps_floor = j.at("eps_floor");
    if (j.contains("eps_quantile")) p.clustering.eps_quantile = j.at("eps_quantile");
    detail::read_opt(j, "align_threshold", p.align.threshold);
    if (j.contains("align_scale")) p.align.adaptive_scale = j.at("align_scale");
    if (j.contains("align_fallback")) p.align.fallback_threshold = j.at("align_fallback");
    if (j.contains("top_fraction")) p.consistency.top_fraction = j.at("top_fraction");
    if (j.contains("bottom_fraction")) p.consistency.bottom_fraction = j.at("bottom_fraction");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c;
  apply_config_json(c, j);
  return c;
}

// Fully resolved flat form, stored next to every run.
inline nlohmann::json to_json(const RunConfig& c) {
  const auto& p = c.pipeline;
  nlohmann::json j{{"seed", c.seed},
                   {"data", c.data},
                   {"out", c.out},
                   {"mode", c.mode},
                   {"setting", c.setting},
                   {"known_classes", c.known_classes},
                   {"unknown_classes", c.unknown_classes},
                   {"known_fraction", c.known_fraction},
                   {"split", {c.split_train, c.split_val, c.split_test}},
                   {"max_steps", c.max_steps},
                   {"quiescent_steps", c.quiescent_steps},
                   {"port", c.port},
                   {"hidden", p.hidden},
                   {"embedding", p.embedding},
                   {"activation", to_string(p.activation)},
                   {"epochs", p.train.epochs},
                   {"batch_size", p.train.batch_size},
                   {"learning_rate", p.train.learning_rate},
                   {"patience", p.train.patience},
                   {"weight_decay", p.train.weight_decay},
                   {"warm_start", p.warm_start},
                   {"eps_floor", p.clustering.eps_floor},
                   {"eps_quantile", p.clustering.eps_quantile},
                   {"align_scale", p.align.adaptive_scale},
                   {"align_fallback", p.align.fallback_threshold},
                   {"top_fraction", p.consistency.top_fraction},
                   {"bottom_fraction", p.consistency.bottom_fraction}};
  j["eps"] = p.clustering.eps ? nlohmann::json(*p.clustering.eps) : nlohmann::json(nullptr);
  j["min_pts"] = p.clustering.min_pts ? nlohmann::json(*p.clustering.min_pts) : nlohmann::json(nullptr);
  j["align_threshold"] = p.align.threshold ? nlohmann::json(*p.align.threshold) : nlohmann::json(nullptr);
  return j;
}

}  // namespace m3s
