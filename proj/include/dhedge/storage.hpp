#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dhedge/environment.hpp"
#include "dhedge/evaluation.hpp"
#include "dhedge/fitting.hpp"
#include "dhedge/session.hpp"

namespace dhedge {

using nlohmann::json;

// Every problem found while validating a record, not just the first.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "validation failed: ";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "; " : "") + v[i];
    return s;
  }
  std::vector<std::string> issues_;
};

// Malformed input; `line()` is 1-based, 0 when not line-oriented.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnsupportedVersion : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- enum names -----------------------------------------------------------------

inline const char* to_string(PredictionMode m) { return m == PredictionMode::sampled ? "sampled" : "deterministic"; }
inline PredictionMode prediction_mode_from(const std::string& s) {
  if (s == "sampled") return PredictionMode::sampled;
  if (s == "deterministic") return PredictionMode::deterministic;
  throw std::invalid_argument("unknown prediction mode '" + s + "'");
}

inline const char* to_string(LearnerKind k) {
  switch (k) {
    case LearnerKind::standard_hedge: return "standard";
    case LearnerKind::delusional_hedge: return "delusional";
    case LearnerKind::accuracy_majority: return "heuristic";
  }
  return "?";
}
inline LearnerKind learner_kind_from(const std::string& s) {
  if (s == "standard") return LearnerKind::standard_hedge;
  if (s == "delusional") return LearnerKind::delusional_hedge;
  if (s == "heuristic") return LearnerKind::accuracy_majority;
  throw std::invalid_argument("unknown learner '" + s + "' (expected standard, delusional or heuristic)");
}

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::stochastic_visibility: return "stochastic_visibility";
    case ScheduleKind::exp2_m_equals_f: return "exp2_m_equals_f";
    case ScheduleKind::exp2_m_equals_n: return "exp2_m_equals_n";
    case ScheduleKind::scripted: return "scripted";
  }
  return "?";
}
inline ScheduleKind schedule_kind_from(const std::string& s) {
  for (auto k : {ScheduleKind::stochastic_visibility, ScheduleKind::exp2_m_equals_f, ScheduleKind::exp2_m_equals_n,
                 ScheduleKind::scripted})
    if (s == to_string(k)) return k;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

inline const char* to_string(ModelKind k) { return k == ModelKind::standard_hedge ? "standard_hedge" : "delusional_hedge"; }
inline ModelKind model_kind_from(const std::string& s) {
  if (s == "standard_hedge") return ModelKind::standard_hedge;
  if (s == "delusional_hedge") return ModelKind::delusional_hedge;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

// --- value <-> json ---------------------------------------------------------------

inline json to_json_value(const EnvironmentConfig& c) {
  json sources = json::array();
  for (const auto& s : c.sources) sources.push_back({{"name", s.display_name}, {"theta", s.theta}});
  return {{"stimulus_low", c.stimulus_low}, {"stimulus_high", c.stimulus_high}, {"theta_star", c.theta_star},
          {"sources", sources},           {"p_visible", c.p_visible},         {"horizon", c.horizon},
          {"seed", c.seed}};
}

inline EnvironmentConfig environment_from_json(const json& j) {
  EnvironmentConfig c;
  c.stimulus_low = j.at("stimulus_low").get<double>();
  c.stimulus_high = j.at("stimulus_high").get<double>();
  c.theta_star = j.at("theta_star").get<double>();
  for (const auto& s : j.at("sources")) c.sources.push_back({s.at("theta").get<double>(), s.at("name").get<std::string>()});
  c.p_visible = j.at("p_visible").get<double>();
  c.horizon = j.at("horizon").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline json to_json_value(const ScheduleSpec& s) {
  json j = {{"kind", to_string(s.kind)}};
  if (s.kind == ScheduleKind::exp2_m_equals_f || s.kind == ScheduleKind::exp2_m_equals_n) {
    j["labeled_prefix"] = s.labeled_prefix;
    j["all_agree_fraction"] = s.all_agree_fraction;
  }
  if (s.kind == ScheduleKind::scripted) {
    json script = json::array();
    for (const auto& t : s.script) script.push_back({{"x", t.x}, {"visible", t.visible}});
    j["script"] = script;
  }
  return j;
}

inline ScheduleSpec schedule_from_json(const json& j) {
  ScheduleSpec s;
  s.kind = schedule_kind_from(j.at("kind").get<std::string>());
  if (s.kind == ScheduleKind::exp2_m_equals_f || s.kind == ScheduleKind::exp2_m_equals_n) {
    s.labeled_prefix = j.value("labeled_prefix", std::size_t{5});
    s.all_agree_fraction = j.value("all_agree_fraction", 0.0);
  } else {
    s.labeled_prefix = 5;
  }
  if (s.kind == ScheduleKind::scripted) {
    s.labeled_prefix = 0;
    for (const auto& t : j.at("script")) s.script.push_back({t.at("x").get<double>(), t.at("visible").get<bool>()});
  }
  return s;
}

inline json to_json_value(const LearnerSpec& l) {
  return {{"kind", to_string(l.kind)}, {"eta", l.config.eta}, {"alpha", l.config.alpha}, {"mode", to_string(l.config.mode)}};
}

inline LearnerSpec learner_from_json(const json& j) {
  LearnerSpec l;
  l.kind = learner_kind_from(j.at("kind").get<std::string>());
  l.config.eta = j.value("eta", 1.0);
  l.config.alpha = j.value("alpha", 0.0);
  l.config.mode = prediction_mode_from(j.value("mode", std::string("sampled")));
  return l;
}

inline json to_json_value(const Counterbalance& c) {
  return {{"source_order", c.source_order},
          {"label_words", {{"-1", c.word_negative}, {"+1", c.word_positive}}},
          {"avatars", c.avatars}};
}

inline Counterbalance counterbalance_from_json(const json& j) {
  Counterbalance c;
  c.source_order = j.at("source_order").get<std::vector<std::size_t>>();
  c.word_negative = j.at("label_words").at("-1").get<std::string>();
  c.word_positive = j.at("label_words").at("+1").get<std::string>();
  c.avatars = j.at("avatars").get<std::vector<std::string>>();
  return c;
}

inline json to_json_value(const Ratings& r) {
  return {{"most_accurate", r.most_accurate}, {"most_majority", r.most_majority}, {"sliders", r.sliders}};
}

inline Ratings ratings_from_json(const json& j) {
  Ratings r;
  r.most_accurate = j.at("most_accurate").get<std::size_t>();
  r.most_majority = j.at("most_majority").get<std::size_t>();
  r.sliders = j.at("sliders").get<std::map<std::string, std::vector<int>>>();
  return r;
}

inline json opinions_to_json(const OpinionVector& v) {
  json a = json::array();
  for (Label b : v) a.push_back(to_int(b));
  return a;
}

inline OpinionVector opinions_from_json(const json& j) {
  OpinionVector v;
  for (const auto& b : j) v.push_back(label_from_int(b.get<long long>()));
  return v;
}

inline json to_json_value(const TrialRecord& t) {
  json j = {{"t", t.t}, {"x", t.x}, {"y", to_int(t.y)}, {"opinions", opinions_to_json(t.opinions)}, {"visible", t.visible}};
  if (t.prediction) j["prediction"] = to_int(*t.prediction);
  if (t.timestamp_ms) j["timestamp_ms"] = *t.timestamp_ms;
  return j;
}

inline TrialRecord trial_from_json(const json& j) {
  TrialRecord t;
  t.t = j.at("t").get<std::size_t>();
  t.x = j.at("x").get<double>();
  t.y = label_from_int(j.at("y").get<long long>());
  t.opinions = opinions_from_json(j.at("opinions"));
  t.visible = j.at("visible").get<bool>();
  if (j.contains("prediction") && !j["prediction"].is_null()) t.prediction = label_from_int(j["prediction"].get<long long>());
  if (j.contains("timestamp_ms") && !j["timestamp_ms"].is_null()) t.timestamp_ms = j["timestamp_ms"].get<std::int64_t>();
  return t;
}

// --- validation ---------------------------------------------------------------------

inline std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline void check_environment(const EnvironmentConfig& c, std::vector<std::string>& issues) {
  try {
    c.validate();
  } catch (const std::exception& e) {
    issues.push_back(std::string("environment: ") + e.what());
  }
}

inline std::vector<std::string> session_issues(const SessionData& s) {
  std::vector<std::string> issues;
  if (s.schema_version != kSchemaVersion) issues.push_back("schema_version " + std::to_string(s.schema_version) + " is not supported");
  if (s.session_id.empty()) issues.push_back("session_id is empty");
  if (s.condition.empty()) issues.push_back("condition is empty");
  check_environment(s.environment, issues);
  const std::size_t k = s.environment.sources.size();
  const auto& cb = s.counterbalance;
  {
    auto order = cb.source_order;
    std::sort(order.begin(), order.end());
    bool perm = order.size() == k;
    for (std::size_t i = 0; perm && i < k; ++i) perm = order[i] == i;
    if (!perm) issues.push_back("counterbalance.source_order is not a permutation of the sources");
    if (cb.avatars.size() != k) issues.push_back("counterbalance.avatars needs one entry per source");
    if (cb.word_negative.empty() || cb.word_positive.empty() || cb.word_negative == cb.word_positive)
      issues.push_back("counterbalance.label_words must be two distinct non-empty words");
  }
  if (s.trials.size() > s.environment.horizon)
    issues.push_back("session has " + std::to_string(s.trials.size()) + " trials but the horizon is " +
                     std::to_string(s.environment.horizon));
  if (s.complete && s.trials.size() != s.environment.horizon)
    issues.push_back("complete session has " + std::to_string(s.trials.size()) + " of " +
                     std::to_string(s.environment.horizon) + " trials");
  for (std::size_t i = 0; i < s.trials.size(); ++i) {
    const auto& t = s.trials[i];
    const std::string where = "trial " + std::to_string(i + 1);
    if (t.t != i + 1) issues.push_back(where + ": index " + std::to_string(t.t) + " out of order (expected " + std::to_string(i + 1) + ")");
    if (!t.prediction) issues.push_back(where + ": missing prediction");
    if (!std::isfinite(t.x)) issues.push_back(where + ": x is not finite");
    if (t.opinions.size() != k) {
      issues.push_back(where + ": expected " + std::to_string(k) + " opinions, got " + std::to_string(t.opinions.size()));
    } else if (issues.size() < 1000 && std::isfinite(t.x) && !s.environment.sources.empty()) {
      if (t.y != true_label(t.x, s.environment.theta_star)) issues.push_back(where + ": y disagrees with x and theta_star");
      if (t.opinions != source_opinions(t.x, s.environment)) issues.push_back(where + ": opinions disagree with x and the source boundaries");
    }
  }
  if (s.ratings) {
    const auto& r = *s.ratings;
    if (r.most_accurate >= k) issues.push_back("ratings.most_accurate is not a source index");
    if (r.most_majority >= k) issues.push_back("ratings.most_majority is not a source index");
    for (const char* dim : kRatingDimensions) {
      auto it = r.sliders.find(dim);
      if (it == r.sliders.end()) {
        issues.push_back(std::string("ratings.") + dim + " missing");
        continue;
      }
      if (it->second.size() != k) issues.push_back(std::string("ratings.") + dim + " needs one value per source");
      for (std::size_t i = 0; i < it->second.size() && i < k; ++i)
        if (it->second[i] < kSliderMin || it->second[i] > kSliderMax)
          issues.push_back(std::string(dim) + "[" + lowercase(s.environment.sources[i].display_name) + "] out of range");
    }
    for (const auto& [dim, _] : r.sliders)
      if (std::find_if(kRatingDimensions.begin(), kRatingDimensions.end(), [&](const char* d) { return dim == d; }) ==
          kRatingDimensions.end())
        issues.push_back("ratings: unknown dimension '" + dim + "'");
  }
  return issues;
}

// --- sessions (JSONL) -------------------------------------------------------------------

namespace detail {

inline const std::set<std::string> kHeaderKeys = {"kind",      "schema_version", "session_id", "condition", "complete",
                                                  "counterbalance", "environment", "schedule", "provenance"};
inline const std::set<std::string> kTrialKeys = {"kind", "t", "x", "y", "opinions", "visible", "prediction", "timestamp_ms"};
inline const std::set<std::string> kRatingsKeys = {"kind", "most_accurate", "most_majority", "sliders"};

inline json unknown_of(const json& j, const std::set<std::string>& known) {
  json extra = json::object();
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) extra[it.key()] = it.value();
  return extra;
}

inline void merge_extra(json& j, const std::map<std::string, json>& extras, const std::string& key) {
  auto it = extras.find(key);
  if (it == extras.end()) return;
  for (auto e = it->second.begin(); e != it->second.end(); ++e)
    if (!j.contains(e.key())) j[e.key()] = e.value();
}

}  // namespace detail

inline json session_header_json(const SessionData& s) {
  json h = {{"kind", "session"},
            {"schema_version", s.schema_version},
            {"session_id", s.session_id},
            {"condition", s.condition},
            {"complete", s.complete},
            {"counterbalance", to_json_value(s.counterbalance)},
            {"environment", to_json_value(s.environment)},
            {"schedule", to_json_value(s.schedule)},
            {"provenance", s.provenance}};
  detail::merge_extra(h, s.unknown_fields, "header");
  return h;
}

inline json session_trial_json(const SessionData& s, const TrialRecord& t) {
  json j = to_json_value(t);
  j["kind"] = "trial";
  detail::merge_extra(j, s.unknown_fields, "trial " + std::to_string(t.t));
  return j;
}

inline json session_ratings_json(const SessionData& s) {
  json j = to_json_value(*s.ratings);
  j["kind"] = "ratings";
  detail::merge_extra(j, s.unknown_fields, "ratings");
  return j;
}

// One JSON object per line with sorted keys, so unchanged data always
// re-serializes to identical bytes.
inline void write_session(const SessionData& s, std::ostream& out) {
  if (auto issues = session_issues(s); !issues.empty()) throw ValidationError(std::move(issues));
  out << session_header_json(s).dump() << '\n';
  for (const auto& t : s.trials) out << session_trial_json(s, t).dump() << '\n';
  if (s.ratings) out << session_ratings_json(s).dump() << '\n';
  if (!out) throw IoError("session write failed");
}

inline std::string session_to_string(const SessionData& s) {
  std::ostringstream os;
  write_session(s, os);
  return os.str();
}

inline void write_session(const SessionData& s, const std::filesystem::path& path) {
  auto text = session_to_string(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out.flush()) throw IoError("write to '" + path.string() + "' failed");
}

inline json parse_json_line(const std::string& line, std::size_t line_no) {
  try {
    auto j = json::parse(line);
    if (!j.is_object()) throw FormatError(line_no, "expected a JSON object");
    return j;
  } catch (const json::exception& e) {  // parse_error, or out_of_range on numeric overflow
    throw FormatError(line_no, std::string("malformed JSON (") + e.what() + ")");
  }
}

inline void check_schema_version(const json& header, std::size_t line_no) {
  if (!header.contains("schema_version") || !header["schema_version"].is_number_integer())
    throw FormatError(line_no, "missing integer schema_version");
  const auto v = header["schema_version"].get<long long>();
  if (v > kSchemaVersion)
    throw UnsupportedVersion(line_no, "schema_version " + std::to_string(v) + " is newer than this build supports (" +
                                          std::to_string(kSchemaVersion) + "); upgrade dhedge to read it");
  if (v < 1) throw UnsupportedVersion(line_no, "schema_version " + std::to_string(v) + " is not a known version");
}

// Reads and validates a session. Unknown fields are kept in
// `unknown_fields`; see unknown_field_warnings().
inline SessionData read_session(std::istream& in) {
  SessionData s;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false, have_ratings = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw FormatError(line_no, "empty line");
    }
    json j = parse_json_line(line, line_no);
    const std::string kind = j.value("kind", "");
    try {
      if (!have_header) {
        if (kind != "session") throw FormatError(line_no, "first record must have kind \"session\"");
        check_schema_version(j, line_no);
        s.schema_version = j["schema_version"].get<int>();
        s.session_id = j.at("session_id").get<std::string>();
        s.condition = j.at("condition").get<std::string>();
        s.complete = j.at("complete").get<bool>();
        s.counterbalance = counterbalance_from_json(j.at("counterbalance"));
        s.environment = environment_from_json(j.at("environment"));
        s.schedule = schedule_from_json(j.at("schedule"));
        s.provenance = j.value("provenance", json::object());
        if (auto extra = detail::unknown_of(j, detail::kHeaderKeys); !extra.empty()) s.unknown_fields["header"] = extra;
        have_header = true;
      } else if (kind == "trial") {
        if (have_ratings) throw FormatError(line_no, "trial after the ratings record");
        auto t = trial_from_json(j);
        if (auto extra = detail::unknown_of(j, detail::kTrialKeys); !extra.empty())
          s.unknown_fields["trial " + std::to_string(t.t)] = extra;
        s.trials.push_back(std::move(t));
      } else if (kind == "ratings") {
        if (have_ratings) throw FormatError(line_no, "duplicate ratings record");
        s.ratings = ratings_from_json(j);
        if (auto extra = detail::unknown_of(j, detail::kRatingsKeys); !extra.empty()) s.unknown_fields["ratings"] = extra;
        have_ratings = true;
      } else {
        throw FormatError(line_no, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError(line_no, std::string("bad field (") + e.what() + ")");
    } catch (const std::invalid_argument& e) {
      throw FormatError(line_no, e.what());
    }
  }
  if (!have_header) throw FormatError(line_no, "no session header");
  if (auto issues = session_issues(s); !issues.empty()) throw ValidationError(std::move(issues));
  return s;
}

inline SessionData read_session(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read '" + path.string() + "'");
  return read_session(in);
}

inline SessionData session_from_string(const std::string& text) {
  std::istringstream in(text);
  return read_session(in);
}

inline std::vector<std::string> unknown_field_warnings(const SessionData& s) {
  std::vector<std::string> out;
  for (const auto& [where, fields] : s.unknown_fields)
    for (auto it = fields.begin(); it != fields.end(); ++it) out.push_back(where + ": unknown field '" + it.key() + "' preserved");
  return out;
}

// --- traces (JSONL) ------------------------------------------------------------------------

inline void write_traces(const std::vector<RunTrace>& traces, std::ostream& out) {
  for (const auto& tr : traces) {
    json h = {{"kind", "trace"},
              {"schema_version", kSchemaVersion},
              {"learner", to_json_value(tr.learner)},
              {"environment", to_json_value(tr.environment)},
              {"schedule", to_json_value(tr.schedule)},
              {"seed", tr.seed},
              {"steps", tr.steps.size()},
              {"final_trust", tr.final_trust}};
    out << h.dump() << '\n';
    for (const auto& s : tr.steps) {
      json j = to_json_value(s.trial);
      j["kind"] = "step";
      j["trust"] = s.trust;
      j["q_neg"] = s.summary.q_neg;
      j["q_pos"] = s.summary.q_pos;
      j["increments"] = s.increments;
      out << j.dump() << '\n';
    }
  }
  if (!out) throw IoError("trace write failed");
}

inline std::vector<RunTrace> read_traces(std::istream& in) {
  std::vector<RunTrace> traces;
  std::size_t expected = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    json j = parse_json_line(line, line_no);
    try {
      const std::string kind = j.value("kind", "");
      if (kind == "trace") {
        if (!traces.empty() && traces.back().steps.size() != expected)
          throw FormatError(line_no, "previous trace is truncated");
        check_schema_version(j, line_no);
        RunTrace tr;
        tr.learner = learner_from_json(j.at("learner"));
        tr.environment = environment_from_json(j.at("environment"));
        tr.schedule = schedule_from_json(j.at("schedule"));
        tr.seed = j.at("seed").get<std::uint64_t>();
        tr.final_trust = j.at("final_trust").get<std::vector<double>>();
        expected = j.at("steps").get<std::size_t>();
        traces.push_back(std::move(tr));
      } else if (kind == "step") {
        if (traces.empty()) throw FormatError(line_no, "step before any trace header");
        TraceStep s;
        s.trial = trial_from_json(j);
        s.trust = j.at("trust").get<std::vector<double>>();
        s.summary = {j.at("q_neg").get<double>(), j.at("q_pos").get<double>()};
        s.increments = j.at("increments").get<std::vector<double>>();
        if (s.trial.t != traces.back().steps.size() + 1) throw FormatError(line_no, "step index out of order");
        traces.back().steps.push_back(std::move(s));
      } else {
        throw FormatError(line_no, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw FormatError(line_no, std::string("bad field (") + e.what() + ")");
    } catch (const std::invalid_argument& e) {
      throw FormatError(line_no, e.what());
    }
  }
  if (!traces.empty() && traces.back().steps.size() != expected) throw FormatError(line_no, "last trace is truncated");
  return traces;
}

// --- environment documents ----------------------------------------------------------------------

inline json environment_document_json(const EnvironmentConfig& c) {
  return {{"kind", "environment"}, {"schema_version", kSchemaVersion}, {"config", to_json_value(c)}};
}

inline EnvironmentConfig environment_from_document(const json& doc) {
  if (doc.value("kind", "") != "environment") throw FormatError(0, "not an environment document");
  check_schema_version(doc, 0);
  try {
    auto c = environment_from_json(doc.at("config"));
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(0, std::string("bad field (") + e.what() + ")");
  }
}

// --- run configuration ------------------------------------------------------------------------

// Everything a `simulate` run needs; embedded in every artifact it writes.
struct RunConfig {
  EnvironmentConfig environment = exp1_config(0.5, 0);
  ScheduleSpec schedule;
  std::vector<LearnerSpec> learners = {LearnerSpec::delusional(1.0, 1.0)};
  std::size_t seeds = 1;
  std::uint64_t base_seed = 0;
  std::size_t window = kDefaultWindow;
};

inline json to_json_value(const RunConfig& c) {
  json learners = json::array();
  for (const auto& l : c.learners) learners.push_back(to_json_value(l));
  return {{"kind", "run_config"},   {"schema_version", kSchemaVersion}, {"environment", to_json_value(c.environment)},
          {"schedule", to_json_value(c.schedule)}, {"learners", learners},  {"seeds", c.seeds},
          {"base_seed", c.base_seed},              {"window", c.window}};
}

// Keys absent from `j` keep the values already in `base`.
inline RunConfig run_config_from_json(const json& j, RunConfig base = {}) {
  if (j.contains("schema_version")) check_schema_version(j, 0);
  if (j.contains("environment")) base.environment = environment_from_json(j["environment"]);
  if (j.contains("schedule")) base.schedule = schedule_from_json(j["schedule"]);
  if (j.contains("learners")) {
    base.learners.clear();
    for (const auto& l : j["learners"]) base.learners.push_back(learner_from_json(l));
  }
  base.seeds = j.value("seeds", base.seeds);
  base.base_seed = j.value("base_seed", base.base_seed);
  base.window = j.value("window", base.window);
  return base;
}

// --- fit reports ----------------------------------------------------------------------------------

inline json to_json_value(const FitResult& f) {
  return {{"model", to_string(f.model)},         {"eta_hat", f.eta_hat},       {"alpha_hat", f.alpha_hat},
          {"log_likelihood", f.log_likelihood}, {"evaluations", f.evaluations}, {"converged", f.converged}};
}

inline json to_json_value(const LRTResult& r) { return {{"lambda", r.lambda}, {"df", r.df}, {"p_value", r.p_value}}; }

inline json to_json_value(const ParameterSummary& p) {
  return {{"n", p.n}, {"mean", p.mean}, {"median", p.median}, {"q1", p.q1}, {"q3", p.q3}};
}

inline json to_json_value(const SearchConfig& c) {
  return {{"eta_min", c.eta_min},     {"eta_max", c.eta_max},       {"eta_points", c.eta_points},
          {"alpha_min", c.alpha_min}, {"alpha_max", c.alpha_max},   {"alpha_points", c.alpha_points},
          {"relative_tolerance", c.relative_tolerance}, {"min_step", c.min_step}, {"max_evaluations", c.max_evaluations}};
}

inline json fit_report_json(const PopulationReport& rep, const SearchConfig& search) {
  json sessions = json::array();
  for (const auto& f : rep.sessions) {
    sessions.push_back({{"session_id", f.session_id},
                        {"condition", f.condition},
                        {"standard_hedge", to_json_value(f.standard)},
                        {"delusional_hedge", to_json_value(f.delusional)},
                        {"lambda", std::max(0.0, 2.0 * (f.delusional.log_likelihood - f.standard.log_likelihood))},
                        {"heuristic_agreement", f.heuristic_agreement}});
  }
  json conditions = json::array();
  for (const auto& c : rep.conditions)
    conditions.push_back({{"condition", c.condition}, {"lrt", to_json_value(c.lrt)}, {"p_bonferroni", c.p_adjusted}});
  return {{"kind", "fit_report"},
          {"schema_version", kSchemaVersion},
          {"search", to_json_value(search)},
          {"sessions", sessions},
          {"pooled_lrt", to_json_value(rep.pooled)},
          {"df_rule", "one extra free parameter (alpha) per session"},
          {"conditions", conditions},
          {"summaries",
           {{"standard_eta", to_json_value(rep.standard_eta)},
            {"delusional_eta", to_json_value(rep.delusional_eta)},
            {"delusional_alpha", to_json_value(rep.delusional_alpha)},
            {"mean_heuristic_agreement", rep.mean_heuristic_agreement}}}};
}

inline std::vector<std::string> fit_report_issues(const json& j) {
  std::vector<std::string> issues;
  try {
    for (const auto& s : j.at("sessions")) {
      const auto id = s.at("session_id").get<std::string>();
      const double lam = s.at("lambda").get<double>();
      if (!(lam >= 0.0)) issues.push_back("session " + id + ": lambda is negative");
      for (const char* m : {"standard_hedge", "delusional_hedge"}) {
        const auto& f = s.at(m);
        if (!(f.at("eta_hat").get<double>() >= 0.0)) issues.push_back("session " + id + ": " + m + " eta_hat < 0");
        if (!(f.at("alpha_hat").get<double>() >= 0.0)) issues.push_back("session " + id + ": " + m + " alpha_hat < 0");
        if (!(f.at("log_likelihood").get<double>() <= 0.0)) issues.push_back("session " + id + ": " + m + " log_likelihood > 0");
      }
      if (s.at("standard_hedge").at("alpha_hat").get<double>() != 0.0)
        issues.push_back("session " + id + ": nested model has non-zero alpha");
    }
    const auto& p = j.at("pooled_lrt");
    const double pv = p.at("p_value").get<double>();
    if (!(pv >= 0.0 && pv <= 1.0)) issues.push_back("pooled_lrt.p_value outside [0, 1]");
    if (!(p.at("lambda").get<double>() >= 0.0)) issues.push_back("pooled_lrt.lambda is negative");
  } catch (const json::exception& e) {
    issues.push_back(std::string("fit report structure: ") + e.what());
  }
  return issues;
}

// --- file validation ----------------------------------------------------------------------------------

struct FileVerdict {
  bool ok = false;
  std::string kind;
  std::vector<std::string> issues;
  std::vector<std::string> warnings;
};

// Detects the artifact type from its first record and validates it fully.
inline FileVerdict validate_file(const std::filesystem::path& path) {
  FileVerdict v;
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    v.issues.push_back("cannot read file");
    return v;
  }
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  try {
    std::string first = text.substr(0, text.find('\n'));
    json head;
    try {
      head = json::parse(first);
    } catch (const json::parse_error&) {
      head = json::parse(text);  // a pretty-printed single document
    }
    v.kind = head.is_object() ? head.value("kind", "") : "";
    std::istringstream is(text);
    if (v.kind == "session") {
      auto s = read_session(is);
      v.warnings = unknown_field_warnings(s);
    } else if (v.kind == "trace") {
      auto traces = read_traces(is);
      for (std::size_t i = 0; i < traces.size(); ++i) {
        try {
          traces[i].environment.validate();
          traces[i].learner.config.validate();
        } catch (const std::exception& e) {
          v.issues.push_back("trace " + std::to_string(i + 1) + ": " + e.what());
        }
      }
    } else {
      json doc = json::parse(text);
      v.kind = doc.value("kind", "");
      if (v.kind == "environment") {
        check_schema_version(doc, 0);
        check_environment(environment_from_json(doc.at("config")), v.issues);
      } else if (v.kind == "run_config") {
        auto rc = run_config_from_json(doc);
        check_environment(rc.environment, v.issues);
        for (const auto& l : rc.learners) {
          try {
            l.config.validate();
          } catch (const std::exception& e) {
            v.issues.push_back(std::string("learner: ") + e.what());
          }
        }
        if (rc.seeds < 1) v.issues.push_back("seeds must be >= 1");
      } else if (v.kind == "fit_report") {
        check_schema_version(doc, 0);
        v.issues = fit_report_issues(doc);
      } else {
        v.issues.push_back("unrecognized artifact kind '" + v.kind + "'");
      }
    }
  } catch (const ValidationError& e) {
    v.issues.insert(v.issues.end(), e.issues().begin(), e.issues().end());
  } catch (const json::exception& e) {
    v.issues.push_back(std::string("malformed JSON (") + e.what() + ")");
  } catch (const std::exception& e) {
    v.issues.push_back(e.what());
  }
  v.ok = v.issues.empty();
  return v;
}

}  // namespace dhedge
