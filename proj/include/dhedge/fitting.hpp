#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhedge/chi_square.hpp"
#include "dhedge/evaluation.hpp"
#include "dhedge/heuristic.hpp"
#include "dhedge/learners.hpp"
#include "dhedge/parallel.hpp"
#include "dhedge/session.hpp"

namespace dhedge {

enum class ModelKind { standard_hedge, delusional_hedge };

inline constexpr double kProbabilityClamp = 1e-9;

// A session reduced to what the likelihood needs, evaluated many times per
// fit without reallocating.
class LikelihoodEvaluator {
 public:
  explicit LikelihoodEvaluator(const SessionData& session) : LikelihoodEvaluator(session.trials, session.sources()) {}

  LikelihoodEvaluator(std::span<const TrialRecord> trials, std::size_t sources)
      : sources_(sources), losses_(sources), trust_(sources) {
    if (sources == 0) throw std::invalid_argument("session has no sources");
    trials_.reserve(trials.size());
    for (const auto& t : trials) {
      if (t.opinions.size() != sources)
        throw std::invalid_argument("trial " + std::to_string(t.t) + " has the wrong number of opinions");
      if (!t.prediction) throw std::invalid_argument("trial " + std::to_string(t.t) + " has no prediction");
      trials_.push_back(&t);
    }
  }

  std::size_t trials() const noexcept { return trials_.size(); }

  // Sum over trials of ln q(prediction), q clamped to [eps, 1 - eps]. When
  // `trust_out` is given it receives the pre-update trust of every trial.
  double operator()(double eta, double alpha, std::vector<TrustVector>* trust_out = nullptr) {
    LearnerConfig config{eta, alpha, PredictionMode::sampled};
    config.validate();
    std::fill(losses_.begin(), losses_.end(), 0.0);
    if (trust_out) trust_out->clear();
    double ll = 0.0;
    for (const TrialRecord* t : trials_) {
      assign_trust_into(losses_, eta, trust_);
      if (trust_out) trust_out->push_back(trust_);
      const auto summary = summarize_opinions(trust_, t->opinions);
      const double q = std::clamp(summary.mass(*t->prediction), kProbabilityClamp, 1.0 - kProbabilityClamp);
      ll += std::log(q);
      if (t->visible) {
        for (std::size_t k = 0; k < sources_; ++k) losses_[k] += zero_one_loss(t->opinions[k], t->y);
      } else if (alpha > 0.0) {
        for (std::size_t k = 0; k < sources_; ++k) losses_[k] += delusional_loss(summary, t->opinions[k], alpha);
      }
    }
    return ll;
  }

 private:
  std::size_t sources_;
  std::vector<const TrialRecord*> trials_;
  std::vector<double> losses_;
  std::vector<double> trust_;
};

inline double log_likelihood(const SessionData& session, ModelKind kind, double eta, double alpha = 0.0) {
  LikelihoodEvaluator eval(session);
  return eval(eta, kind == ModelKind::standard_hedge ? 0.0 : alpha);
}

struct SearchConfig {
  double eta_min = 1e-3;
  double eta_max = 100.0;
  std::size_t eta_points = 25;
  double alpha_min = 1e-3;
  double alpha_max = 10.0;
  std::size_t alpha_points = 25;
  double relative_tolerance = 1e-8;  // refinement stops once an accepted move gains less than this
  double min_step = 1e-7;            // relative to max(1, parameter)
  std::size_t max_evaluations = 5000;

  void validate() const {
    if (!(eta_min > 0.0 && eta_max > eta_min)) throw std::invalid_argument("need 0 < eta_min < eta_max");
    if (!(alpha_min > 0.0 && alpha_max > alpha_min)) throw std::invalid_argument("need 0 < alpha_min < alpha_max");
    if (eta_points < 2 || alpha_points < 2) throw std::invalid_argument("grids need at least two points");
  }
};

// {0} followed by `points` log-spaced values over [lo, hi].
inline std::vector<double> log_grid_with_zero(double lo, double hi, std::size_t points) {
  std::vector<double> g{0.0};
  const double step = std::log(hi / lo) / static_cast<double>(points - 1);
  for (std::size_t i = 0; i < points; ++i)
    g.push_back(i + 1 == points ? hi : lo * std::exp(step * static_cast<double>(i)));
  return g;
}

struct FitResult {
  std::string session_id;
  ModelKind model = ModelKind::standard_hedge;
  double eta_hat = 0.0;
  double alpha_hat = 0.0;
  double log_likelihood = 0.0;
  std::size_t evaluations = 0;
  bool converged = false;
};

namespace detail {

// Bounded compass search from `start`; only strict improvements are accepted
// so ties keep the earlier (smaller) point.
inline void refine(LikelihoodEvaluator& eval, const SearchConfig& cfg, bool fit_alpha, FitResult& best) {
  const double eta_ratio = std::pow(cfg.eta_max / cfg.eta_min, 1.0 / static_cast<double>(cfg.eta_points - 1)) - 1.0;
  const double alpha_ratio =
      std::pow(cfg.alpha_max / cfg.alpha_min, 1.0 / static_cast<double>(cfg.alpha_points - 1)) - 1.0;
  double step[2] = {best.eta_hat > 0.0 ? best.eta_hat * eta_ratio : cfg.eta_min,
                    best.alpha_hat > 0.0 ? best.alpha_hat * alpha_ratio : cfg.alpha_min};
  const double upper[2] = {cfg.eta_max, cfg.alpha_max};
  const int dims = fit_alpha ? 2 : 1;
  best.converged = false;
  while (best.evaluations < cfg.max_evaluations) {
    bool moved = false;
    double gain = 0.0;
    for (int d = 0; d < dims && !moved; ++d) {
      for (double dir : {-1.0, 1.0}) {
        double p[2] = {best.eta_hat, best.alpha_hat};
        p[d] = std::clamp(p[d] + dir * step[d], 0.0, upper[d]);
        if (p[d] == (d == 0 ? best.eta_hat : best.alpha_hat)) continue;
        const double ll = eval(p[0], fit_alpha ? p[1] : 0.0);
        ++best.evaluations;
        if (ll > best.log_likelihood) {
          gain = ll - best.log_likelihood;
          best.eta_hat = p[0];
          best.alpha_hat = p[1];
          best.log_likelihood = ll;
          moved = true;
          step[d] *= 2.0;
          break;
        }
      }
    }
    if (moved) {
      if (gain / std::max(1.0, std::abs(best.log_likelihood)) < cfg.relative_tolerance) {
        best.converged = true;
        return;
      }
      continue;
    }
    bool all_small = true;
    for (int d = 0; d < dims; ++d) {
      const double base = d == 0 ? best.eta_hat : best.alpha_hat;
      step[d] *= 0.5;
      if (step[d] > cfg.min_step * std::max(1.0, base)) all_small = false;
    }
    if (all_small) {
      best.converged = true;
      return;
    }
  }
}

inline FitResult fit_with(LikelihoodEvaluator& eval, ModelKind kind, const SearchConfig& cfg) {
  FitResult nested{{}, ModelKind::standard_hedge, 0.0, 0.0, -std::numeric_limits<double>::infinity(), 0, false};
  for (double eta : log_grid_with_zero(cfg.eta_min, cfg.eta_max, cfg.eta_points)) {
    const double ll = eval(eta, 0.0);
    ++nested.evaluations;
    if (ll > nested.log_likelihood) {
      nested.eta_hat = eta;
      nested.log_likelihood = ll;
    }
  }
  refine(eval, cfg, false, nested);
  if (kind == ModelKind::standard_hedge) return nested;

  // The nested optimum seeds the full search, so LL_full >= LL_nested always.
  FitResult full = nested;
  full.model = ModelKind::delusional_hedge;
  const auto alphas = log_grid_with_zero(cfg.alpha_min, cfg.alpha_max, cfg.alpha_points);
  for (double eta : log_grid_with_zero(cfg.eta_min, cfg.eta_max, cfg.eta_points)) {
    for (std::size_t i = 1; i < alphas.size(); ++i) {
      const double ll = eval(eta, alphas[i]);
      ++full.evaluations;
      if (ll > full.log_likelihood) {
        full.eta_hat = eta;
        full.alpha_hat = alphas[i];
        full.log_likelihood = ll;
      }
    }
  }
  refine(eval, cfg, true, full);
  return full;
}

}  // namespace detail

// Maximum-likelihood (eta, alpha): log-spaced grid plus zero edges, then a
// local derivative-free refinement from the best grid point. Among equal
// likelihoods the smallest eta (then alpha) wins.
inline FitResult fit_mle(const SessionData& session, ModelKind kind, const SearchConfig& cfg = {}) {
  cfg.validate();
  if (session.trials.empty()) throw std::invalid_argument("cannot fit session '" + session.session_id + "': no trials");
  LikelihoodEvaluator eval(session);
  auto r = detail::fit_with(eval, kind, cfg);
  r.session_id = session.session_id;
  return r;
}

// --- Likelihood-ratio tests --------------------------------------------------------

struct LRTResult {
  double lambda = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

// Pooled test of the delusional hedge against its alpha = 0 slice, one extra
// parameter per session.
inline LRTResult likelihood_ratio_test(const std::vector<FitResult>& nested, const std::vector<FitResult>& full) {
  if (nested.size() != full.size()) throw std::invalid_argument("likelihood_ratio_test: session sets differ in size");
  if (nested.empty()) throw std::invalid_argument("likelihood_ratio_test: no sessions");
  double diff = 0.0;
  for (std::size_t i = 0; i < nested.size(); ++i) {
    if (nested[i].session_id != full[i].session_id)
      throw std::invalid_argument("likelihood_ratio_test: session '" + nested[i].session_id + "' is paired with '" +
                                  full[i].session_id + "'");
    if (nested[i].model != ModelKind::standard_hedge || full[i].model != ModelKind::delusional_hedge)
      throw std::invalid_argument("likelihood_ratio_test: expects standard (nested) and delusional (full) fits");
    diff += full[i].log_likelihood - nested[i].log_likelihood;
  }
  LRTResult r;
  r.lambda = std::max(0.0, 2.0 * diff);
  r.df = nested.size();
  r.p_value = std::clamp(chi_square_sf(r.lambda, static_cast<double>(r.df)), 0.0, 1.0);
  return r;
}

inline double bonferroni(double p, std::size_t comparisons) {
  return std::min(1.0, p * static_cast<double>(comparisons));
}

// Mean probability that the accuracy-majority heuristic would have made each
// of the subject's predictions.
inline double heuristic_agreement(const SessionData& session) {
  if (session.trials.empty()) return 0.0;
  auto state = HeuristicState::initial(session.sources());
  double sum = 0.0;
  for (const auto& t : session.trials) {
    const double p = heuristic_prob_positive(state, t.opinions);
    sum += t.prediction == Label::positive ? p : 1.0 - p;
    state = heuristic_update(std::move(state), t.opinions, t.feedback());
  }
  return sum / static_cast<double>(session.trials.size());
}

struct SessionFit {
  std::string session_id;
  std::string condition;
  FitResult standard;
  FitResult delusional;
  double heuristic_agreement = 0.0;
};

struct ConditionTest {
  std::string condition;
  LRTResult lrt;
  double p_adjusted = 1.0;  // Bonferroni over the conditions in the report
};

struct ParameterSummary {
  std::size_t n = 0;
  double mean = 0.0, median = 0.0, q1 = 0.0, q3 = 0.0;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline ParameterSummary summarize_parameter(const std::vector<double>& v) {
  ParameterSummary s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = quantile(v, 0.5);
  s.q1 = quantile(v, 0.25);
  s.q3 = quantile(v, 0.75);
  return s;
}

struct PopulationReport {
  std::vector<SessionFit> sessions;
  LRTResult pooled;
  std::vector<ConditionTest> conditions;  // sorted by condition tag
  ParameterSummary standard_eta, delusional_eta, delusional_alpha;
  double mean_heuristic_agreement = 0.0;
};

inline PopulationReport fit_population(const std::vector<SessionData>& sessions, const SearchConfig& cfg = {},
                                       std::size_t jobs = 1) {
  if (sessions.empty()) throw std::invalid_argument("fit_population: no sessions");
  PopulationReport rep;
  rep.sessions = parallel_map(sessions.size(), jobs, [&](std::size_t i) {
    const auto& s = sessions[i];
    SessionFit f;
    f.session_id = s.session_id;
    f.condition = s.condition;
    f.standard = fit_mle(s, ModelKind::standard_hedge, cfg);
    f.delusional = fit_mle(s, ModelKind::delusional_hedge, cfg);
    f.heuristic_agreement = heuristic_agreement(s);
    return f;
  });
  std::map<std::string, std::pair<std::vector<FitResult>, std::vector<FitResult>>> by_condition;
  std::vector<FitResult> all_nested, all_full;
  std::vector<double> se, de, da;
  double agree = 0.0;
  for (const auto& f : rep.sessions) {
    all_nested.push_back(f.standard);
    all_full.push_back(f.delusional);
    by_condition[f.condition].first.push_back(f.standard);
    by_condition[f.condition].second.push_back(f.delusional);
    se.push_back(f.standard.eta_hat);
    de.push_back(f.delusional.eta_hat);
    da.push_back(f.delusional.alpha_hat);
    agree += f.heuristic_agreement;
  }
  rep.pooled = likelihood_ratio_test(all_nested, all_full);
  for (const auto& [cond, fits] : by_condition) {
    ConditionTest c;
    c.condition = cond;
    c.lrt = likelihood_ratio_test(fits.first, fits.second);
    c.p_adjusted = bonferroni(c.lrt.p_value, by_condition.size());
    rep.conditions.push_back(c);
  }
  rep.standard_eta = summarize_parameter(se);
  rep.delusional_eta = summarize_parameter(de);
  rep.delusional_alpha = summarize_parameter(da);
  rep.mean_heuristic_agreement = agree / static_cast<double>(rep.sessions.size());
  return rep;
}

// --- Synthetic sessions -----------------------------------------------------------

// A session whose predictions come from a simulated learner; used for
// parameter recovery and as CLI output.
inline SessionData synthetic_session(const LearnerSpec& agent, const Condition& condition, std::uint64_t seed,
                                     std::size_t horizon = 100) {
  auto env = condition.environment(seed);
  env.horizon = horizon;
  auto trace = run_episode(agent, env, condition.schedule(), seed);
  SessionData s;
  s.session_id = "sim-" + std::to_string(seed);
  s.condition = condition.tag();
  s.counterbalance = Counterbalance::identity(env.sources.size());
  s.environment = trace.environment;
  s.schedule = trace.schedule;
  s.provenance = {{"generator",
                   {{"kind", agent.kind == LearnerKind::standard_hedge      ? "standard"
                             : agent.kind == LearnerKind::delusional_hedge ? "delusional"
                                                                           : "heuristic"},
                    {"eta", agent.config.eta},
                    {"alpha", agent.config.alpha},
                    {"seed", seed}}}};
  for (auto& step : trace.steps) s.trials.push_back(std::move(step.trial));
  s.complete = true;
  return s;
}

}  // namespace dhedge
