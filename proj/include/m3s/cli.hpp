#pragma once

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "m3s/config.hpp"
#include "m3s/experiment.hpp"
#include "m3s/service.hpp"

namespace m3s::cli {

// Flags shared by run, sweep and serve. Unset flags leave the config file's
// values alone.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<std::string> setting;
  std::optional<std::size_t> max_steps;
  std::optional<int> port;

  void attach(CLI::App& app, bool with_port) {
    app.add_option("--config", config, "JSON config file (flat keys)");
    app.add_option("--seed", seed, "Seed for every random choice");
    app.add_option("--data", data, "CSV dataset (id,label,f0,...)");
    app.add_option("--out", out, "Output directory");
    app.add_option("--mode", mode, "no-expert | with-expert | interactive")
        ->check(CLI::IsMember({"no-expert", "with-expert", "interactive"}));
    app.add_option("--setting", setting, "iscxtor1 | iscxtor2")->check(CLI::IsMember({"iscxtor1", "iscxtor2"}));
    app.add_option("--max-steps", max_steps, "Step limit")->check(CLI::PositiveNumber);
    if (with_port) app.add_option("--port", port, "HTTP port")->check(CLI::Range(1, 65535));
  }

  RunConfig resolve() const {
    RunConfig rc = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) rc.seed = *seed;
    if (data) rc.data = *data;
    if (out) rc.out = *out;
    if (mode) rc.mode = *mode;
    if (setting) rc.setting = *setting;
    if (max_steps) rc.max_steps = *max_steps;
    if (port) rc.port = *port;
    rc.validate();
    if (rc.data.empty()) throw ConfigError("no dataset: pass --data or set \"data\" in the config");
    return rc;
  }
};

inline FlowDataset load_for(const RunConfig& rc) {
  FlowDataset d = load_records(rc.data);
  if (!rc.setting.empty())
    for (const auto& p : check_iscxtor_counts(class_counts(d.records))) log(LogLevel::Warn, "class counts: " + p);
  return d;
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f << j.dump(2) << '\n';
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

inline void print_summary(std::ostream& out, const ExperimentResult& r) {
  const auto& m = r.eval.metrics;
  out << "steps " << r.steps << "  classes " << r.final_labels.size() << "  pseudo-labels " << r.pseudo_labels
      << " (precision " << fmt(r.pseudo_label_precision) << ")\n"
      << "accuracy " << fmt(m.accuracy) << "  precision " << fmt(m.precision) << "  recall " << fmt(m.recall)
      << "  fpr " << fmt(m.fpr) << "\n"
      << "known accuracy " << fmt(r.known_accuracy) << "  unknown recall " << fmt(r.unknown_recall)
      << "  expert proportion " << fmt(r.expert_proportion) << "\n";
}

// Step log line used by run and report.
inline std::string step_line(const StepReport& r) {
  std::ostringstream s;
  s << "step " << std::setw(2) << r.step << "  pool " << std::setw(5) << r.pool_size << "  accepted " << std::setw(4)
    << r.accepted << "  unknown " << std::setw(4) << r.detected_unknown << "  deferred " << std::setw(4) << r.deferred
    << "  noise " << std::setw(4) << r.noise << "  clusters " << std::setw(2) << r.cluster_count << "  classes "
    << r.num_classes;
  if (r.evaluation) s << "  acc " << fmt(r.evaluation->accuracy);
  if (!r.classes_added.empty()) {
    s << "  added";
    for (const auto& c : r.classes_added) s << ' ' << c;
  }
  return s.str();
}

// Builds the state for a run, writing config.json and starting run.jsonl.
struct RunOutputs {
  std::filesystem::path dir;
  std::ofstream log;

  explicit RunOutputs(const RunConfig& rc) : dir(rc.out) {
    std::filesystem::create_directories(dir);
    write_json(dir / "config.json", to_json(rc));
    log.open(dir / "run.jsonl");
    if (!log) throw Error("cannot write '" + (dir / "run.jsonl").string() + "'");
  }

  void step(const PipelineState& s, const StepReport& r) {
    log << to_json(r).dump() << '\n';
    log.flush();
    checkpoint(s, (dir / "checkpoint.json").string());
  }
};

inline int cmd_synth(int classes, int per_class, int dim, double separation, std::uint64_t seed, const std::string& out,
                     std::ostream& os) {
  const FlowDataset d = synth_gaussians(classes, per_class, dim, separation, seed);
  save_records(out, d.records, d.dim);
  os << "wrote " << d.records.size() << " records (" << classes << " classes, d=" << dim << ") to " << out << "\n";
  return 0;
}

inline int cmd_run(const RunConfig& rc, std::ostream& os) {
  if (rc.mode == "interactive") throw ConfigError("interactive mode needs a human at the console: use `m3s serve`");
  const FlowDataset data = load_for(rc);
  const ExperimentSetting setting = rc.experiment_setting(data);
  RunOutputs outputs(rc);
  const auto on_step = [&](const PipelineState& s, const StepReport& r) {
    outputs.step(s, r);
    log(LogLevel::Info, step_line(r));
  };
  const ExperimentResult r = run_experiment(data, setting, rc.resolved_pipeline(), rc.stop_rule(), on_step);
  write_json(outputs.dir / "result.json", to_json(r));
  print_summary(os, r);
  os << "outputs in " << outputs.dir.string() << "\n";
  return 0;
}

inline std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto v = m3s::detail::parse_double(m3s::detail::trim(item));
    if (!v) throw ConfigError("--values: '" + item + "' is not a number");
    out.push_back(*v);
  }
  if (out.empty()) throw ConfigError("--values is empty");
  return out;
}

inline int cmd_sweep(const RunConfig& rc, const std::string& axis_name, const std::string& values, std::ostream& os) {
  const SweepAxis axis = sweep_axis_from_string(axis_name);
  const auto vals = parse_values(values);
  const FlowDataset data = load_for(rc);
  const auto rows = sweep(data, rc.experiment_setting(data), axis, vals, rc.resolved_pipeline(), rc.stop_rule());
  const std::filesystem::path dir(rc.out);
  std::filesystem::create_directories(dir);
  write_json(dir / "config.json", to_json(rc));
  {
    std::ofstream f(dir / "sweep.csv");
    write_sweep_table(f, axis, rows);
  }
  write_json(dir / "sweep.json", sweep_series(axis, rows));
  write_sweep_table(os, axis, rows);
  return 0;
}

inline std::vector<StepReport> read_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open run log '" + path + "'");
  std::vector<StepReport> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (m3s::detail::trim(line).empty()) continue;
    try {
      out.push_back(step_report_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError(path + ": line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline int cmd_report(const std::string& target, std::ostream& os) {
  std::filesystem::path p(target);
  std::filesystem::path dir = p;
  if (std::filesystem::is_directory(p))
    p /= "run.jsonl";
  else
    dir = p.parent_path();
  const auto reports = read_run_log(p.string());
  std::size_t accepted = 0, unknown = 0;
  for (const auto& r : reports) {
    os << step_line(r) << "\n";
    accepted += r.accepted;
    unknown += r.detected_unknown;
  }
  os << reports.size() << " steps, " << accepted << " pseudo-labels accepted, " << unknown << " unknown detections\n";
  if (!reports.empty() && reports.back().evaluation) {
    const auto& m = *reports.back().evaluation;
    os << "final accuracy " << fmt(m.accuracy) << "  precision " << fmt(m.precision) << "  recall " << fmt(m.recall)
       << "  fpr " << fmt(m.fpr) << "\n";
  }
  const auto result = dir / "result.json";
  if (std::filesystem::exists(result)) {
    std::ifstream f(result);
    const auto j = nlohmann::json::parse(f);
    os << "known accuracy " << fmt(j.at("known_accuracy").get<double>()) << "  unknown recall "
       << fmt(j.at("unknown_recall").get<double>()) << "  expert proportion "
       << fmt(j.at("expert_proportion").get<double>()) << "\n";
  }
  return 0;
}

namespace signals {
inline std::atomic<httplib::Server*> g_server{nullptr};
inline void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}
}  // namespace signals

inline int cmd_serve(const RunConfig& rc, const std::string& host, std::ostream& os) {
  const FlowDataset data = load_for(rc);
  const ExperimentSetting setting = rc.experiment_setting(data);
  PipelineConfig cfg = rc.resolved_pipeline();
  PipelineState state = make_state(make_setting_bundle(data, setting), cfg);
  RunOutputs outputs(rc);

  ApiState api;
  api.set_mode(rc.mode);
  auto server = make_http_server(api);
  if (!server->bind_to_port(host, rc.port)) throw Error("cannot bind " + host + ":" + std::to_string(rc.port));
  std::atomic<bool> cancel{false};
  std::thread worker([&] {
    try {
      run_with_api(state, rc.stop_rule(), api, rc.mode == "interactive", cancel,
                   [&](const PipelineState& s, const StepReport& r) {
                     outputs.step(s, r);
                     log(LogLevel::Info, step_line(r));
                   });
    } catch (const std::exception& e) {
      log(LogLevel::Warn, std::string("pipeline stopped: ") + e.what());
      api.set_status(RunStatus::Done);
    }
  });
  signals::g_server = server.get();
  std::signal(SIGINT, signals::on_signal);
  std::signal(SIGTERM, signals::on_signal);
  os << "serving on http://" << host << ":" << rc.port << "/api/status (Ctrl-C to stop)" << std::endl;
  server->listen_after_bind();
  signals::g_server = nullptr;
  cancel = true;
  api.wake();
  worker.join();
  return 0;
}

// Entry point; returns the process exit status.
inline int main(int argc, const char* const* argv, std::ostream& os = std::cout, std::ostream& es = std::cerr) {
  CLI::App app{"m3s: self-training traffic classifier with unknown-traffic detection"};
  app.require_subcommand(1);

  int classes = 5, per_class = 200, dim = 20;
  double separation = 8.0;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "synth.csv";
  auto* synth = app.add_subcommand("synth", "Write a synthetic Gaussian dataset");
  synth->add_option("--classes", classes)->check(CLI::Range(2, 1000));
  synth->add_option("--per-class", per_class)->check(CLI::Range(10, 10000000));
  synth->add_option("--dim", dim)->check(CLI::PositiveNumber);
  synth->add_option("--separation", separation)->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--out", synth_out, "Output CSV path");

  CommonFlags run_flags, sweep_flags, serve_flags;
  auto* run = app.add_subcommand("run", "Run the pipeline to its stop rule");
  run_flags.attach(*run, false);

  std::string axis, values;
  auto* sw = app.add_subcommand("sweep", "Run one experiment per value of an axis");
  sweep_flags.attach(*sw, false);
  sw->add_option("--axis", axis, "known_fraction | n_known_classes | n_unknown_classes")->required();
  sw->add_option("--values", values, "Comma-separated values")->required();

  std::string report_target;
  auto* report = app.add_subcommand("report", "Summarize a run log");
  report->add_option("path", report_target, "Run directory or run.jsonl")->required();

  std::string host = "127.0.0.1";
  auto* serve = app.add_subcommand("serve", "Run the pipeline behind the HTTP API");
  serve_flags.attach(*serve, true);
  serve->add_option("--host", host);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, os, es);
  }

  try {
    if (*synth) return cmd_synth(classes, per_class, dim, separation, synth_seed, synth_out, os);
    if (*run) return cmd_run(run_flags.resolve(), os);
    if (*sw) return cmd_sweep(sweep_flags.resolve(), axis, values, os);
    if (*report) return cmd_report(report_target, os);
    if (*serve) return cmd_serve(serve_flags.resolve(), host, os);
  } catch (const std::exception& e) {
    es << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace m3s::cli
