#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhedge/environment.hpp"
#include "dhedge/rng.hpp"
#include "dhedge/session.hpp"
#include "dhedge/storage.hpp"

namespace dhedge {

// An API-level failure with the HTTP status it maps to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& message, nlohmann::json detail = nlohmann::json::object())
      : std::runtime_error(message), status_(status), code_(std::move(code)), detail_(std::move(detail)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  nlohmann::json body() const {
    nlohmann::json b = {{"error", code_}, {"message", what()}};
    for (auto it = detail_.begin(); it != detail_.end(); ++it) b[it.key()] = it.value();
    return b;
  }

 private:
  int status_;
  std::string code_;
  nlohmann::json detail_;
};

struct ServiceConfig {
  std::filesystem::path data_dir = "sessions";
  std::string experiment = "exp1";  // auto-assignment pool: exp1 or exp2
  // Fixes session ids, seeds and counterbalancing (tests, demos). Unset means
  // std::random_device.
  std::optional<std::uint64_t> seed;
  std::function<std::int64_t()> clock;  // wall-clock milliseconds
  // Replaces the random counterbalance of every new session (pilots, tests).
  std::optional<Counterbalance> counterbalance;
};

// Live sessions of the fruit task. Every accepted event is appended to the
// session's log before it is acknowledged, and the log alone is enough to
// rebuild the session after a restart.
class ExperimentService {
 public:
  explicit ExperimentService(ServiceConfig config) : config_(std::move(config)) {
    if (config_.experiment != "exp1" && config_.experiment != "exp2")
      throw std::invalid_argument("experiment must be exp1 or exp2");
    if (!config_.clock)
      config_.clock = [] {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
            .count();
      };
    std::filesystem::create_directories(config_.data_dir);
    std::random_device rd;
    id_rng_.seed(config_.seed ? derive_seed(*config_.seed, 0x5e55) : (std::uint64_t{rd()} << 32 | rd()));
    for (const auto& c : pool()) assigned_[c.tag()] = 0;
    recover();
  }

  ExperimentService(const ExperimentService&) = delete;
  ExperimentService& operator=(const ExperimentService&) = delete;

  const ServiceConfig& config() const noexcept { return config_; }

  std::vector<Condition> pool() const { return config_.experiment == "exp1" ? exp1_conditions() : exp2_conditions(); }

  nlohmann::json health() const {
    std::lock_guard lock(mu_);
    return {{"status", "ok"}, {"sessions", sessions_.size()}, {"experiment", config_.experiment}};
  }

  // {"condition": "auto" | "<tag>"}; a missing condition means auto.
  nlohmann::json create_session(const nlohmann::json& request) {
    std::string wanted = "auto";
    if (request.is_object() && request.contains("condition")) {
      if (!request["condition"].is_string()) throw ServiceError(400, "unknown_condition", "condition must be a string tag");
      wanted = request["condition"].get<std::string>();
    }
    std::shared_ptr<Live> live;
    {
      std::lock_guard lock(mu_);
      Condition condition;
      if (wanted == "auto") {
        condition = least_filled();
      } else {
        try {
          condition = Condition::parse(wanted);
        } catch (const std::invalid_argument& e) {
          throw ServiceError(400, "unknown_condition", e.what());
        }
      }
      const std::uint64_t seed = id_rng_();
      std::string id;
      do {
        id = random_id();
      } while (sessions_.count(id));
      live = std::make_shared<Live>(build_session(id, condition, seed));
      live->path = log_path(id);
      nlohmann::json created = {{"event", "created"},
                                {"ts_ms", config_.clock()},
                                {"session", session_header_json(live->data)},
                                {"trials", nlohmann::json::array()}};
      for (const auto& t : live->data.trials) created["trials"].push_back(to_json_value(t));
      append(*live, created);
      sessions_[id] = live;
      ++assigned_[condition.tag()];
    }
    std::lock_guard lock(live->mu);
    return descriptor(*live);
  }

  nlohmann::json get_trial(const std::string& id) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    expect_prediction_phase(*live);
    const auto& trial = live->data.trials[live->cursor];
    const auto& cb = live->data.counterbalance;
    nlohmann::json opinions = nlohmann::json::array();
    for (std::size_t pos = 0; pos < cb.source_order.size(); ++pos) {
      const auto k = cb.source_order[pos];
      opinions.push_back({{"position", pos}, {"avatar", cb.avatars[k]}, {"word", cb.word(trial.opinions[k])}});
    }
    return {{"session_id", id}, {"t", trial.t}, {"total", live->data.trials.size()}, {"opinions", opinions},
            {"choices", response_words(*live)}};
  }

  // Body: {"t": <trial>, "choice": <label word>}.
  nlohmann::json post_prediction(const std::string& id, const nlohmann::json& body, const std::string& idempotency_key = {}) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    if (auto cached = replay(*live, idempotency_key, "prediction", body)) return *cached;
    expect_prediction_phase(*live);
    auto& trial = live->data.trials[live->cursor];
    if (!body.is_object() || !body.contains("t") || !body["t"].is_number_integer() || body["t"].get<long long>() < 1)
      throw ServiceError(400, "invalid_request", "field 't' (trial index) is required");
    const auto t = body["t"].get<std::size_t>();
    if (t != trial.t)
      throw ServiceError(409, "out_of_order", "expected a prediction for trial " + std::to_string(trial.t),
                         {{"expected", {{"event", "prediction"}, {"t", trial.t}}}});
    const std::string choice = body.contains("choice") && body["choice"].is_string() ? body["choice"].get<std::string>() : "";
    const auto& cb = live->data.counterbalance;
    Label prediction;
    if (choice == cb.word_negative)
      prediction = Label::negative;
    else if (choice == cb.word_positive)
      prediction = Label::positive;
    else
      throw ServiceError(400, "invalid_prediction",
                         "choice must be '" + cb.word_negative + "' or '" + cb.word_positive + "'");
    const auto ts = config_.clock();
    nlohmann::json event = {{"event", "prediction"}, {"t", t}, {"prediction", to_int(prediction)}, {"ts_ms", ts}};
    if (!idempotency_key.empty()) {
      event["idempotency_key"] = idempotency_key;
      event["request"] = body;
    }
    append(*live, event);
    return apply_prediction(*live, prediction, ts, idempotency_key, body);
  }

  // Body: {"most_accurate": avatar, "most_majority": avatar,
  //        "sliders": {dimension: {avatar: value}}}.
  nlohmann::json post_ratings(const std::string& id, const nlohmann::json& body, const std::string& idempotency_key = {}) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    if (auto cached = replay(*live, idempotency_key, "ratings", body)) return *cached;
    if (live->data.complete) throw ServiceError(409, "session_complete", "session is already complete");
    if (live->cursor < live->data.trials.size())
      throw ServiceError(409, "premature_ratings",
                         "ratings are accepted after all " + std::to_string(live->data.trials.size()) + " predictions",
                         {{"expected", {{"event", "prediction"}, {"t", live->cursor + 1}}}});
    Ratings ratings = decode_ratings(*live, body);
    nlohmann::json event = {{"event", "ratings"}, {"ratings", to_json_value(ratings)}, {"ts_ms", config_.clock()}};
    if (!idempotency_key.empty()) {
      event["idempotency_key"] = idempotency_key;
      event["request"] = body;
    }
    append(*live, event);
    return apply_ratings(*live, std::move(ratings), idempotency_key, body);
  }

  // Canonical session JSONL: recorded trials only, counterbalance decoded.
  std::string export_session(const std::string& id) {
    auto live = find(id);
    std::lock_guard lock(live->mu);
    return session_to_string(snapshot(*live));
  }

  std::filesystem::path session_file(const std::string& id) const { return config_.data_dir / (id + ".session.jsonl"); }
  std::filesystem::path log_path(const std::string& id) const { return config_.data_dir / (id + ".log.jsonl"); }

  std::map<std::string, std::size_t> assignment_counts() const {
    std::lock_guard lock(mu_);
    return assigned_;
  }

 private:
  struct Live {
    explicit Live(SessionData d) : data(std::move(d)) {}
    std::mutex mu;
    SessionData data;
    std::size_t cursor = 0;  // predictions recorded so far
    std::filesystem::path path;
    std::map<std::string, std::pair<nlohmann::json, nlohmann::json>> idempotent;  // key -> (request, response)
  };

  static constexpr std::size_t kHorizon = 100;

  SessionData build_session(const std::string& id, const Condition& condition, std::uint64_t seed) const {
    SessionData s;
    s.session_id = id;
    s.condition = condition.tag();
    s.environment = condition.environment(seed);
    s.environment.horizon = kHorizon;
    s.schedule = condition.schedule();
    s.trials = generate_stream(s.environment, s.schedule);
    Rng rng = make_rng(derive_seed(seed, 0xcb));
    const std::size_t k = s.environment.sources.size();
    s.counterbalance = Counterbalance::identity(k);
    std::vector<std::string> avatars = s.counterbalance.avatars;
    for (std::size_t i = k; i > 1; --i) {
      std::swap(s.counterbalance.source_order[i - 1], s.counterbalance.source_order[uniform_index(rng, i)]);
      std::swap(avatars[i - 1], avatars[uniform_index(rng, i)]);
    }
    s.counterbalance.avatars = avatars;
    if (bernoulli(rng, 0.5)) std::swap(s.counterbalance.word_negative, s.counterbalance.word_positive);
    if (config_.counterbalance) s.counterbalance = *config_.counterbalance;
    s.provenance = {{"source", "experiment-service"}, {"seed", seed}};
    return s;
  }

  Condition least_filled() {
    auto candidates = pool();
    std::size_t lo = SIZE_MAX;
    for (const auto& c : candidates) lo = std::min(lo, assigned_[c.tag()]);
    std::erase_if(candidates, [&](const Condition& c) { return assigned_[c.tag()] != lo; });
    return candidates[uniform_index(id_rng_, candidates.size())];
  }

  std::string random_id() {
    static constexpr char hex[] = "0123456789abcdef";
    std::string id;
    for (int w = 0; w < 2; ++w) {
      auto v = id_rng_();
      for (int i = 0; i < 16; ++i, v >>= 4) id += hex[v & 15];
    }
    return id;
  }

  std::shared_ptr<Live> find(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ServiceError(404, "not_found", "unknown session '" + id + "'");
    return it->second;
  }

  static void expect_prediction_phase(const Live& live) {
    if (live.data.complete) throw ServiceError(409, "session_complete", "session is already complete");
    if (live.cursor >= live.data.trials.size())
      throw ServiceError(409, "out_of_order", "all trials are done; ratings expected", {{"expected", {{"event", "ratings"}}}});
  }

  static nlohmann::json response_words(const Live& live) {
    return {live.data.counterbalance.word_negative, live.data.counterbalance.word_positive};
  }

  nlohmann::json descriptor(const Live& live) const {
    const auto& cb = live.data.counterbalance;
    nlohmann::json sources = nlohmann::json::array();
    for (std::size_t pos = 0; pos < cb.source_order.size(); ++pos)
      sources.push_back({{"position", pos}, {"avatar", cb.avatars[cb.source_order[pos]]}});
    return {{"session_id", live.data.session_id},
            {"condition", live.data.condition},
            {"total", live.data.trials.size()},
            {"sources", sources},
            {"choices", response_words(live)},
            {"rating_dimensions", kRatingDimensions},
            {"slider_range", {kSliderMin, kSliderMax}},
            {"next", next_event(live)}};
  }

  static nlohmann::json next_event(const Live& live) {
    if (live.data.complete) return {{"event", "done"}};
    if (live.cursor < live.data.trials.size()) return {{"event", "prediction"}, {"t", live.cursor + 1}};
    return {{"event", "ratings"}};
  }

  std::optional<nlohmann::json> replay(Live& live, const std::string& key, const char* kind, const nlohmann::json& body) const {
    if (key.empty()) return std::nullopt;
    auto it = live.idempotent.find(std::string(kind) + ":" + key);
    if (it == live.idempotent.end()) return std::nullopt;
    if (it->second.first != body)
      throw ServiceError(422, "idempotency_mismatch", "idempotency key was already used with a different request");
    return it->second.second;
  }

  nlohmann::json apply_prediction(Live& live, Label prediction, std::int64_t ts, const std::string& key,
                                  const nlohmann::json& request) {
    auto& trial = live.data.trials[live.cursor];
    trial.prediction = prediction;
    trial.timestamp_ms = ts;
    ++live.cursor;
    nlohmann::json response = {{"t", trial.t}, {"labeled", trial.visible}};
    if (trial.visible) response["label"] = live.data.counterbalance.word(trial.y);
    response["next"] = next_event(live);
    if (!key.empty()) live.idempotent["prediction:" + key] = {request, response};
    return response;
  }

  nlohmann::json apply_ratings(Live& live, Ratings ratings, const std::string& key, const nlohmann::json& request) {
    live.data.ratings = std::move(ratings);
    live.data.complete = true;
    write_session(snapshot(live), session_file(live.data.session_id));
    nlohmann::json response = {{"session_id", live.data.session_id},
                               {"complete", true},
                               {"export_path", "/api/sessions/" + live.data.session_id + "/export"},
                               {"file", session_file(live.data.session_id).string()}};
    if (!key.empty()) live.idempotent["ratings:" + key] = {request, response};
    return response;
  }

  Ratings decode_ratings(const Live& live, const nlohmann::json& body) const {
    const auto& s = live.data;
    const std::size_t k = s.sources();
    std::vector<std::string> issues;
    auto source_of = [&](const std::string& avatar) -> std::optional<std::size_t> {
      for (std::size_t i = 0; i < k; ++i)
        if (s.counterbalance.avatars[i] == avatar) return i;
      return std::nullopt;
    };
    Ratings r;
    if (!body.is_object()) throw ServiceError(400, "invalid_ratings", "ratings body must be an object");
    for (auto [field, out] : {std::pair{"most_accurate", &r.most_accurate}, std::pair{"most_majority", &r.most_majority}}) {
      std::optional<std::size_t> idx;
      if (body.contains(field) && body[field].is_string()) idx = source_of(body[field].get<std::string>());
      if (idx)
        *out = *idx;
      else
        issues.push_back(std::string(field) + " must name one of the sources' avatars");
    }
    const nlohmann::json sliders = body.value("sliders", nlohmann::json::object());
    for (const char* dim : kRatingDimensions) {
      std::vector<int> values(k, 0);
      for (std::size_t i = 0; i < k; ++i) {
        const std::string name = std::string(dim) + "[" + lowercase(s.environment.sources[i].display_name) + "]";
        const auto& avatar = s.counterbalance.avatars[i];
        if (!sliders.contains(dim) || !sliders[dim].is_object() || !sliders[dim].contains(avatar)) {
          issues.push_back(name + " missing");
          continue;
        }
        const auto& v = sliders[dim][avatar];
        if (!v.is_number()) {
          issues.push_back(name + " is not a number");
          continue;
        }
        const double d = v.get<double>();
        if (!(d >= kSliderMin && d <= kSliderMax) || d != std::floor(d)) {
          issues.push_back(name + " out of range");
          continue;
        }
        values[i] = static_cast<int>(d);
      }
      r.sliders[dim] = values;
    }
    if (!issues.empty()) throw ServiceError(400, "invalid_ratings", issues.front(), {{"issues", issues}});
    return r;
  }

  SessionData snapshot(const Live& live) const {
    SessionData s = live.data;
    s.trials.resize(live.cursor);
    return s;
  }

  static void append(Live& live, const nlohmann::json& event) {
    std::ofstream out(live.path, std::ios::binary | std::ios::app);
    out << event.dump() << '\n';
    out.flush();
    if (!out) throw ServiceError(500, "storage_failure", "could not append to the session log");
  }

  // Rebuilds every session from its log. A torn final line (crash during a
  // write) is dropped and the file truncated to the last complete event.
  void recover() {
    for (const auto& entry : std::filesystem::directory_iterator(config_.data_dir)) {
      const auto name = entry.path().filename().string();
      if (!name.ends_with(".log.jsonl")) continue;
      std::ifstream in(entry.path(), std::ios::binary);
      std::string line;
      std::shared_ptr<Live> live;
      std::uintmax_t good_bytes = 0, offset = 0;
      while (std::getline(in, line)) {
        const bool terminated = !in.eof();
        offset += line.size() + (terminated ? 1 : 0);
        nlohmann::json ev;
        try {
          if (!terminated) throw std::runtime_error("torn line");
          ev = nlohmann::json::parse(line);
        } catch (const std::exception&) {
          break;
        }
        const auto kind = ev.value("event", "");
        if (kind == "created") {
          SessionData d = session_from_string_lenient(ev["session"], ev["trials"]);
          live = std::make_shared<Live>(std::move(d));
          live->path = entry.path();
        } else if (live && kind == "prediction") {
          const auto pred = label_from_int(ev.at("prediction").get<long long>());
          apply_prediction(*live, pred, ev.at("ts_ms").get<std::int64_t>(), ev.value("idempotency_key", ""),
                           ev.value("request", nlohmann::json()));
        } else if (live && kind == "ratings") {
          apply_ratings(*live, ratings_from_json(ev.at("ratings")), ev.value("idempotency_key", ""),
                        ev.value("request", nlohmann::json()));
        }
        good_bytes = offset;
      }
      in.close();
      if (!live) continue;
      if (std::filesystem::file_size(entry.path()) != good_bytes) std::filesystem::resize_file(entry.path(), good_bytes);
      ++assigned_[live->data.condition];
      sessions_[live->data.session_id] = live;
    }
  }

  static SessionData session_from_string_lenient(const nlohmann::json& header, const nlohmann::json& trials) {
    SessionData s;
    s.schema_version = header.at("schema_version").get<int>();
    s.session_id = header.at("session_id").get<std::string>();
    s.condition = header.at("condition").get<std::string>();
    s.counterbalance = counterbalance_from_json(header.at("counterbalance"));
    s.environment = environment_from_json(header.at("environment"));
    s.schedule = schedule_from_json(header.at("schedule"));
    s.provenance = header.value("provenance", nlohmann::json::object());
    for (const auto& t : trials) s.trials.push_back(trial_from_json(t));
    return s;
  }

  ServiceConfig config_;
  mutable std::mutex mu_;
  Rng id_rng_;
  std::map<std::string, std::shared_ptr<Live>> sessions_;
  std::map<std::string, std::size_t> assigned_;
};

}  // namespace dhedge
