#pragma once

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "m3s/evaluation.hpp"
#include "m3s/pipeline.hpp"

namespace m3s {

enum class RunStatus { Idle, Training, AwaitingExpert, Done };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Idle: return "Idle";
    case RunStatus::Training: return "Training";
    case RunStatus::AwaitingExpert: return "AwaitingExpert";
    case RunStatus::Done: return "Done";
  }
  return "?";
}

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

// Top-2 principal components of `points`, projected. Rows of the result
// follow the input order; fewer than two points or dimensions yield zeros
// in the missing coordinates.
inline std::vector<std::array<double, 2>> pca_2d(const std::vector<Vec>& points) {
  std::vector<std::array<double, 2>> out(points.size(), {0.0, 0.0});
  if (points.size() < 2) return out;
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = static_cast<Eigen::Index>(points.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  // Eigenvalues ascend; take the last two columns.
  const Eigen::Index k = std::min<Eigen::Index>(2, d);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - c);
    // Sign convention: largest-magnitude loading positive, for stable output.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = x * v;
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)] = proj(i);
  }
  return out;
}

namespace detail {

inline nlohmann::json group_json(const ExpertGroup& g, bool all_ids) {
  nlohmann::json ids = nlohmann::json::array();
  const std::size_t limit = all_ids ? g.samples.size() : std::min<std::size_t>(20, g.samples.size());
  for (std::size_t i = 0; i < limit; ++i) ids.push_back(g.samples[i].id);
  nlohmann::json j{{"gid", g.gid},
                   {"step", g.step},
                   {"cluster", g.cluster},
                   {"size", g.samples.size()},
                   {"mean_confidence", g.mean_confidence},
                   {"distance_to_nearest", g.distance_to_nearest},
                   {"status", to_string(g.status)},
                   {all_ids ? "sample_ids" : "representative_ids", std::move(ids)}};
  j["verdict"] = g.verdict ? nlohmann::json{{"action", g.verdict->action == Verdict::Action::Label ? "label" : "dismiss"},
                                            {"class_name", g.verdict->class_name}}
                           : nlohmann::json(nullptr);
  return j;
}

inline ApiResponse error_response(int status, std::string message, std::string field = {}) {
  nlohmann::json j{{"error", std::move(message)}};
  if (!field.empty()) j["field"] = std::move(field);
  return {status, std::move(j)};
}

inline std::optional<int> parse_gid(std::string_view s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || v < 0) return std::nullopt;
  return v;
}

}  // namespace detail

// Read snapshot of a run plus the verdict staging queue. Handlers only touch
// the snapshot; the pipeline thread publishes a new one after every step and
// drains staged verdicts before the next.
class ApiState {
 public:
  // Called by the pipeline thread after a completed step.
  void publish(const PipelineState& s, const std::vector<StepReport>& reports) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& r : reports) steps.push_back(to_json(r));
    std::vector<ExpertGroup> qs = s.queue.groups();
    const EvalResult ev = s.bundle.test.empty() ? EvalResult{} : evaluate_state(s);
    std::vector<Vec> emb;
    emb.reserve(s.bundle.unlabeled.size());
    for (const auto& r : s.bundle.unlabeled) emb.push_back(s.model.embed(r.features));
    const auto xy = pca_2d(emb);
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t i = 0; i < xy.size(); ++i)
      points.push_back({{"id", s.bundle.unlabeled[i].id}, {"x", xy[i][0]}, {"y", xy[i][1]}});

    std::unique_lock lock(mu_);
    for (auto& g : qs) {
      // Verdicts received but not yet handed to the pipeline stay visible.
      if (const auto it = staging_.find(g.gid); it != staging_.end() && g.status == GroupStatus::Pending) {
        g.status = GroupStatus::Staged;
        g.verdict = it->second;
      }
    }
    step_ = s.step;
    labels_ = s.bundle.label_set.names();
    pool_size_ = s.bundle.unlabeled.size();
    labeled_size_ = s.bundle.labeled.size();
    steps_ = std::move(steps);
    groups_ = std::move(qs);
    confusion_ = s.bundle.test.empty() ? nlohmann::json(nullptr)
                                       : nlohmann::json{{"matrix", ev.matrix.to_json()},
                                                        {"detailed", ev.detailed.to_json()},
                                                        {"metrics", to_json(ev.metrics)}};
    projection_ = {{"step", s.step}, {"points", std::move(points)}};
  }

  void set_status(RunStatus st) {
    {
      std::unique_lock lock(mu_);
      status_ = st;
    }
    cv_.notify_all();
  }

  RunStatus status() const {
    std::shared_lock lock(mu_);
    return status_;
  }

  void set_mode(std::string mode) {
    std::unique_lock lock(mu_);
    mode_ = std::move(mode);
  }

  // Hands staged verdicts to the pipeline; returns how many were staged.
  std::size_t drain_verdicts(PipelineState& s) {
    std::unique_lock lock(mu_);
    std::size_t n = 0;
    for (auto& [gid, v] : staging_) {
      const ExpertGroup* g = s.queue.find(gid);
      if (g && g->status == GroupStatus::Pending) {
        s.queue.stage(gid, v);
        ++n;
      } else {
        log(LogLevel::Warn, "dropping verdict for group " + std::to_string(gid) + ": no longer pending");
      }
    }
    staging_.clear();
    return n;
  }

  // Groups still waiting for a verdict (Pending and not in the staging queue).
  std::size_t awaiting_count() const {
    std::shared_lock lock(mu_);
    std::size_t n = 0;
    for (const auto& g : groups_) n += g.status == GroupStatus::Pending;
    return n;
  }

  // Blocks until every published group has a verdict, or `stop` is set.
  void wait_for_verdicts(const std::atomic<bool>& stop) {
    std::shared_lock lock(mu_);
    cv_.wait(lock, [&] {
      if (stop.load()) return true;
      for (const auto& g : groups_)
        if (g.status == GroupStatus::Pending) return false;
      return true;
    });
  }

  void wake() { cv_.notify_all(); }

  ApiResponse handle(std::string_view method, std::string_view path, std::string_view body = {}) {
    if (method == "OPTIONS") return {204, nullptr};
    constexpr std::string_view prefix = "/api/";
    if (path.substr(0, prefix.size()) != prefix) return detail::error_response(404, "no such endpoint");
    const std::string_view rest = path.substr(prefix.size());

    if (method == "GET") {
      std::shared_lock lock(mu_);
      if (rest == "status") return status_response();
      if (rest == "steps") return {200, steps_};
      if (rest == "queue") {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& g : groups_) a.push_back(detail::group_json(g, false));
        return {200, std::move(a)};
      }
      if (rest == "confusion") {
        if (confusion_.is_null()) return detail::error_response(404, "no evaluation available yet");
        return {200, confusion_};
      }
      if (rest == "embedding-projection") return {200, projection_};
      if (rest.substr(0, 6) == "queue/") {
        const auto gid = detail::parse_gid(rest.substr(6));
        if (!gid) return detail::error_response(404, "no such endpoint");
        const auto* g = group(*gid);
        if (!g) return detail::error_response(404, "no expert group " + std::to_string(*gid));
        return {200, detail::group_json(*g, true)};
      }
      return detail::error_response(404, "no such endpoint");
    }

    if (method == "POST" && rest.substr(0, 6) == "queue/" && rest.size() > 14 &&
        rest.substr(rest.size() - 8) == "/verdict") {
      const auto gid = detail::parse_gid(rest.substr(6, rest.size() - 14));
      if (!gid) return detail::error_response(404, "no such endpoint");
      return post_verdict(*gid, body);
    }
    if (method == "POST" || method == "GET") return detail::error_response(404, "no such endpoint");
    return detail::error_response(405, "method not allowed");
  }

 private:
  ApiResponse status_response() const {
    nlohmann::json j{{"step", step_},
                     {"status", to_string(status_)},
                     {"mode", mode_},
                     {"labels", labels_},
                     {"pool_size", pool_size_},
                     {"labeled_size", labeled_size_}};
    std::size_t pending = 0;
    for (const auto& g : groups_) pending += g.status == GroupStatus::Pending;
    j["pending_groups"] = pending;
    j["latest_report"] = steps_.empty() ? nlohmann::json(nullptr) : steps_.back();
    return {200, std::move(j)};
  }

  const ExpertGroup* group(int gid) const {
    for (const auto& g : groups_)
      if (g.gid == gid) return &g;
    return nullptr;
  }

  ApiResponse post_verdict(int gid, std::string_view body) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception&) {
      return detail::error_response(400, "body is not valid JSON", "body");
    }
    if (!j.is_object()) return detail::error_response(400, "body must be a JSON object", "body");
    if (!j.contains("action") || !j.at("action").is_string())
      return detail::error_response(400, "action must be \"label\" or \"dismiss\"", "action");
    const std::string action = j.at("action");
    if (action != "label" && action != "dismiss")
      return detail::error_response(400, "action must be \"label\" or \"dismiss\"", "action");
    Verdict v = Verdict::dismiss();
    if (action == "label") {
      if (!j.contains("class_name") || !j.at("class_name").is_string() || j.at("class_name").get<std::string>().empty())
        return detail::error_response(400, "class_name is required for a label verdict", "class_name");
      v = Verdict::label(j.at("class_name").get<std::string>());
    } else if (j.contains("class_name") && !j.at("class_name").is_null() && !j.at("class_name").is_string()) {
      return detail::error_response(400, "class_name must be a string", "class_name");
    }

    std::unique_lock lock(mu_);
    ExpertGroup* g = nullptr;
    for (auto& x : groups_)
      if (x.gid == gid) g = &x;
    if (!g) return detail::error_response(404, "no expert group " + std::to_string(gid));

    if (const auto it = answered_.find(gid); it != answered_.end()) {
      const auto& [prior, response] = it->second;
      if (prior.action == v.action && (v.action == Verdict::Action::Dismiss || prior.class_name == v.class_name))
        return response;
      auto err = detail::error_response(409, "expert group " + std::to_string(gid) + " already has a verdict");
      err.body["group"] = detail::group_json(*g, false);
      return err;
    }
    if (g->status != GroupStatus::Pending) {
      auto err = detail::error_response(409, "expert group " + std::to_string(gid) + " is " + to_string(g->status) +
                                                 ", not pending");
      err.body["group"] = detail::group_json(*g, false);
      return err;
    }
    g->status = GroupStatus::Staged;
    g->verdict = v;
    staging_[gid] = v;
    ApiResponse ok{200, detail::group_json(*g, false)};
    answered_[gid] = {v, ok};
    lock.unlock();
    cv_.notify_all();
    return ok;
  }

  mutable std::shared_mutex mu_;
  std::condition_variable_any cv_;
  RunStatus status_ = RunStatus::Idle;
  std::string mode_ = "no-expert";
  std::size_t step_ = 0;
  std::vector<std::string> labels_;
  std::size_t pool_size_ = 0;
  std::size_t labeled_size_ = 0;
  nlohmann::json steps_ = nlohmann::json::array();
  std::vector<ExpertGroup> groups_;
  nlohmann::json confusion_ = nullptr;
  nlohmann::json projection_ = {{"step", 0}, {"points", nlohmann::json::array()}};
  std::map<int, Verdict> staging_;
  std::map<int, std::pair<Verdict, ApiResponse>> answered_;
};

// Runs the pipeline under the snapshot contract. With `wait_for_expert`, the
// loop pauses after a step until every new group has a verdict.
inline std::vector<StepReport> run_with_api(PipelineState& s, const StopRule& stop, ApiState& api,
                                            bool wait_for_expert, const std::atomic<bool>& cancel,
                                            const StepCallback& on_step = {}) {
  stop.validate();
  std::vector<StepReport> reports;
  api.publish(s, reports);
  while (!stop.fires(s, reports.size()) && !cancel.load()) {
    api.drain_verdicts(s);
    api.set_status(RunStatus::Training);
    reports.push_back(run_step(s));
    api.publish(s, reports);
    if (on_step) on_step(s, reports.back());
    if (wait_for_expert && api.awaiting_count() > 0) {
      api.set_status(RunStatus::AwaitingExpert);
      api.wait_for_verdicts(cancel);
      // A verdict counts as activity: keep going at least one more step.
      s.quiet_steps = 0;
    }
  }
  api.set_status(RunStatus::Done);
  return reports;
}

// HTTP front end: every /api route is delegated to `api.handle`.
inline std::unique_ptr<httplib::Server> make_http_server(ApiState& api) {
  auto srv = std::make_unique<httplib::Server>();
  srv->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  auto bridge = [&api](const httplib::Request& req, httplib::Response& res) {
    const ApiResponse r = api.handle(req.method, req.path, req.body);
    res.status = r.status;
    if (r.status != 204) res.set_content(r.body.dump(), "application/json");
  };
  srv->Get(R"(/api/.*)", bridge);
  srv->Post(R"(/api/.*)", bridge);
  srv->Options(R"(/api/.*)", bridge);
  return srv;
}

}  // namespace m3s
