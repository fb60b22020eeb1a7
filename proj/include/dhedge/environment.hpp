#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dhedge/label.hpp"
#include "dhedge/learners.hpp"
#include "dhedge/rng.hpp"

namespace dhedge {

struct SourceModel {
  double theta = 0.0;  // decision boundary, in stimulus units
  std::string display_name;
  friend bool operator==(const SourceModel&, const SourceModel&) = default;
};

struct EnvironmentConfig {
  double stimulus_low = 0.0;
  double stimulus_high = 300.0;
  double theta_star = 150.0;
  std::vector<SourceModel> sources;
  double p_visible = 0.5;
  std::size_t horizon = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(stimulus_low < stimulus_high)) throw std::invalid_argument("stimulus_low must be < stimulus_high");
    if (!(theta_star >= stimulus_low && theta_star <= stimulus_high))
      throw std::invalid_argument("theta_star outside the stimulus interval");
    if (sources.empty()) throw std::invalid_argument("at least one source is required");
    for (const auto& s : sources)
      if (!(s.theta >= stimulus_low && s.theta <= stimulus_high))
        throw std::invalid_argument("source '" + s.display_name + "' boundary outside the stimulus interval");
    if (!(p_visible >= 0.0 && p_visible <= 1.0)) throw std::invalid_argument("p_visible must lie in [0, 1]");
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  }
  friend bool operator==(const EnvironmentConfig&, const EnvironmentConfig&) = default;
};

// One time step. `x` is hidden from learners and participants.
struct TrialRecord {
  std::size_t t = 0;  // 1-based
  double x = 0.0;
  Label y = Label::positive;
  OpinionVector opinions;
  bool visible = false;
  std::optional<Label> prediction;
  std::optional<std::int64_t> timestamp_ms;

  Feedback feedback() const { return visible ? Feedback::labeled(y) : Feedback::unlabeled(); }
  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

enum class ScheduleKind { stochastic_visibility, exp2_m_equals_f, exp2_m_equals_n, scripted };

struct ScriptedTrial {
  double x = 0.0;
  bool visible = false;
  friend bool operator==(const ScriptedTrial&, const ScriptedTrial&) = default;
};

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::stochastic_visibility;
  std::size_t labeled_prefix = 5;   // Exp2 only
  double all_agree_fraction = 0.0;  // Exp2 only: share of unlabeled trials drawn where all sources agree
  std::vector<ScriptedTrial> script;

  static ScheduleSpec stochastic() { return {}; }
  static ScheduleSpec scripted(std::vector<ScriptedTrial> trials) {
    return {ScheduleKind::scripted, 0, 0.0, std::move(trials)};
  }
  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

enum class Exp2Condition { m_equals_f, m_equals_n };

inline ScheduleSpec exp2_schedule(Exp2Condition condition, double all_agree_fraction = 0.0) {
  if (!(all_agree_fraction >= 0.0 && all_agree_fraction <= 1.0))
    throw std::invalid_argument("all_agree_fraction must lie in [0, 1]");
  ScheduleSpec s;
  s.kind = condition == Exp2Condition::m_equals_f ? ScheduleKind::exp2_m_equals_f : ScheduleKind::exp2_m_equals_n;
  s.labeled_prefix = 5;
  s.all_agree_fraction = all_agree_fraction;
  return s;
}

// Stimulus distribution P_X; uniform unless another sampler is injected.
using StimulusSampler = std::function<double(const EnvironmentConfig&, Rng&)>;

inline double sample_item(const EnvironmentConfig& config, Rng& rng) {
  return uniform(rng, config.stimulus_low, config.stimulus_high);
}

inline Label true_label(double x, double theta_star) noexcept { return x < theta_star ? Label::negative : Label::positive; }

inline Label source_opinion(double x, double theta) noexcept { return x < theta ? Label::negative : Label::positive; }
inline Label source_opinion(double x, const SourceModel& s) noexcept { return source_opinion(x, s.theta); }

inline OpinionVector source_opinions(double x, const EnvironmentConfig& config) {
  OpinionVector b;
  b.reserve(config.sources.size());
  for (const auto& s : config.sources) b.push_back(source_opinion(x, s));
  return b;
}

inline constexpr double kFarTheta = 50.0;
inline constexpr double kMiddleTheta = 107.5;
inline constexpr double kNearTheta = 165.0;
inline constexpr std::size_t kFar = 0, kMiddle = 1, kNear = 2;

// Fruit-task geometry: sources in canonical order Far, Middle, Near.
inline EnvironmentConfig exp1_config(double p_visible, std::uint64_t seed) {
  EnvironmentConfig c;
  c.stimulus_low = 0.0;
  c.stimulus_high = 300.0;
  c.theta_star = 150.0;
  c.sources = {{kFarTheta, "Far"}, {kMiddleTheta, "Middle"}, {kNearTheta, "Near"}};
  c.p_visible = p_visible;
  c.horizon = 100;
  c.seed = seed;
  c.validate();
  return c;
}

// Stimulus intervals realizing each Experiment 2 opinion pattern, derived from
// a Far < Middle < theta* <= Near geometry.
struct Exp2Regions {
  double labeled_lo, labeled_hi;  // Near alone correct
  double mf_lo, mf_hi;            // Middle agrees with Far against Near
  double mn_lo, mn_hi;            // Middle agrees with Near against Far
};

inline Exp2Regions exp2_regions(const EnvironmentConfig& c) {
  if (c.sources.size() != 3) throw std::invalid_argument("Experiment 2 schedules need exactly three sources");
  const double far = c.sources[kFar].theta, mid = c.sources[kMiddle].theta, near = c.sources[kNear].theta;
  if (!(far < mid && mid < c.theta_star && c.theta_star <= near))
    throw std::invalid_argument("Experiment 2 schedules need Far < Middle < theta* <= Near boundaries");
  return {mid, c.theta_star, mid, near, far, mid};
}

namespace detail {

inline double draw_all_agree(const EnvironmentConfig& c, Rng& rng) {
  const double lo_len = c.sources[kFar].theta - c.stimulus_low;
  const double hi_len = c.stimulus_high - c.sources[kNear].theta;
  if (lo_len + hi_len <= 0.0) throw std::invalid_argument("geometry has no all-agree region");
  double u = uniform(rng, 0.0, lo_len + hi_len);
  return u < lo_len ? c.stimulus_low + u : c.sources[kNear].theta + (u - lo_len);
}

}  // namespace detail

inline TrialRecord make_trial(const EnvironmentConfig& config, std::size_t t, double x, bool visible) {
  TrialRecord r;
  r.t = t;
  r.x = x;
  r.y = true_label(x, config.theta_star);
  r.opinions = source_opinions(x, config);
  r.visible = visible;
  return r;
}

// Draw order per trial: stimulus, then (stochastic schedules) visibility.
inline TrialRecord generate_trial(const EnvironmentConfig& config, const ScheduleSpec& schedule, std::size_t t, Rng& rng,
                                  const StimulusSampler& sampler = {}) {
  if (t < 1 || t > config.horizon)
    throw std::out_of_range("trial index " + std::to_string(t) + " outside 1.." + std::to_string(config.horizon));
  switch (schedule.kind) {
    case ScheduleKind::stochastic_visibility: {
      double x = sampler ? sampler(config, rng) : sample_item(config, rng);
      bool visible = bernoulli(rng, config.p_visible);
      return make_trial(config, t, x, visible);
    }
    case ScheduleKind::exp2_m_equals_f:
    case ScheduleKind::exp2_m_equals_n: {
      const auto reg = exp2_regions(config);
      if (t <= schedule.labeled_prefix) return make_trial(config, t, uniform(rng, reg.labeled_lo, reg.labeled_hi), true);
      double x;
      if (schedule.all_agree_fraction > 0.0 && bernoulli(rng, schedule.all_agree_fraction))
        x = detail::draw_all_agree(config, rng);
      else if (schedule.kind == ScheduleKind::exp2_m_equals_f)
        x = uniform(rng, reg.mf_lo, reg.mf_hi);
      else
        x = uniform(rng, reg.mn_lo, reg.mn_hi);
      return make_trial(config, t, x, false);
    }
    case ScheduleKind::scripted: {
      if (t > schedule.script.size())
        throw std::out_of_range("scripted schedule exhausted at trial " + std::to_string(t) + " (script has " +
                                std::to_string(schedule.script.size()) + " trials)");
      const auto& s = schedule.script[t - 1];
      return make_trial(config, t, s.x, s.visible);
    }
  }
  throw std::logic_error("unknown schedule kind");
}

// The full T-trial stream for `config.seed`.
inline std::vector<TrialRecord> generate_stream(const EnvironmentConfig& config, const ScheduleSpec& schedule,
                                                const StimulusSampler& sampler = {}) {
  config.validate();
  if (schedule.kind == ScheduleKind::scripted && schedule.script.size() != config.horizon)
    throw std::invalid_argument("scripted schedule has " + std::to_string(schedule.script.size()) +
                                " trials but the horizon is " + std::to_string(config.horizon));
  Rng rng = make_rng(derive_seed(config.seed, 0xe1));
  std::vector<TrialRecord> trials;
  trials.reserve(config.horizon);
  for (std::size_t t = 1; t <= config.horizon; ++t) trials.push_back(generate_trial(config, schedule, t, rng, sampler));
  return trials;
}

// Distinct opinion patterns reachable by sweeping x over the stimulus
// interval, in order of increasing x.
inline std::vector<OpinionVector> reachable_patterns(const EnvironmentConfig& config) {
  std::vector<double> cuts{config.stimulus_low};
  for (const auto& s : config.sources)
    if (s.theta > config.stimulus_low && s.theta < config.stimulus_high) cuts.push_back(s.theta);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<OpinionVector> out;
  for (double x : cuts) {
    auto p = source_opinions(x, config);
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(std::move(p));
  }
  return out;
}

// --- Condition tags ---------------------------------------------------------
// "exp1:p=<p_visible>" or "exp2:m-equals-f" / "exp2:m-equals-n".

struct Condition {
  enum class Kind { exp1, exp2 } kind = Kind::exp1;
  double p_visible = 0.0;
  Exp2Condition exp2 = Exp2Condition::m_equals_f;

  static Condition exp1(double p) { return {Kind::exp1, p, Exp2Condition::m_equals_f}; }
  static Condition exp2_cond(Exp2Condition c) { return {Kind::exp2, 0.0, c}; }

  std::string tag() const {
    if (kind == Kind::exp2) return exp2 == Exp2Condition::m_equals_f ? "exp2:m-equals-f" : "exp2:m-equals-n";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, p_visible);
    return "exp1:p=" + std::string(buf, end);
  }

  static Condition parse(std::string_view tag) {
    if (tag == "exp2:m-equals-f") return exp2_cond(Exp2Condition::m_equals_f);
    if (tag == "exp2:m-equals-n") return exp2_cond(Exp2Condition::m_equals_n);
    constexpr std::string_view prefix = "exp1:p=";
    if (tag.starts_with(prefix)) {
      auto num = tag.substr(prefix.size());
      double p = 0.0;
      auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), p);
      if (ec == std::errc{} && ptr == num.data() + num.size() && p >= 0.0 && p <= 1.0) return exp1(p);
    }
    throw std::invalid_argument("unknown condition tag '" + std::string(tag) + "'");
  }

  EnvironmentConfig environment(std::uint64_t seed) const {
    return exp1_config(kind == Kind::exp1 ? p_visible : 0.0, seed);
  }
  ScheduleSpec schedule() const { return kind == Kind::exp1 ? ScheduleSpec::stochastic() : exp2_schedule(exp2); }

  friend bool operator==(const Condition&, const Condition&) = default;
};

inline std::vector<Condition> exp1_conditions() {
  return {Condition::exp1(0.0), Condition::exp1(0.25), Condition::exp1(0.5), Condition::exp1(0.75),
          Condition::exp1(1.0)};
}
inline std::vector<Condition> exp2_conditions() {
  return {Condition::exp2_cond(Exp2Condition::m_equals_f), Condition::exp2_cond(Exp2Condition::m_equals_n)};
}

}  // namespace dhedge
