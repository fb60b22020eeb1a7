#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhedge/environment.hpp"
#include "dhedge/heuristic.hpp"
#include "dhedge/learners.hpp"
#include "dhedge/rng.hpp"

namespace dhedge {

enum class LearnerKind { standard_hedge, delusional_hedge, accuracy_majority };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::delusional_hedge;
  LearnerConfig config;

  static LearnerSpec standard(double eta, PredictionMode mode = PredictionMode::sampled) {
    return {LearnerKind::standard_hedge, {eta, 0.0, mode}};
  }
  static LearnerSpec delusional(double eta, double alpha, PredictionMode mode = PredictionMode::sampled) {
    return {LearnerKind::delusional_hedge, {eta, alpha, mode}};
  }
  static LearnerSpec heuristic() { return {LearnerKind::accuracy_majority, {0.0, 0.0, PredictionMode::sampled}}; }
  friend bool operator==(const LearnerSpec&, const LearnerSpec&) = default;
};

// One executed trial. For hedge learners `trust` is the pre-update trust used
// for this trial's summary. For the heuristic, `trust` is empty and
// `summary.q_pos` is its probability of answering +1.
struct TraceStep {
  TrialRecord trial;  // trial.prediction holds the learner's prediction
  TrustVector trust;
  OpinionSummary summary;
  std::vector<double> increments;
  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

struct RunTrace {
  LearnerSpec learner;
  EnvironmentConfig environment;
  ScheduleSpec schedule;
  std::uint64_t seed = 0;
  std::vector<TraceStep> steps;
  // Trust computed from losses through the last trial (hedge), or the
  // heuristic's ranking scores after the last trial.
  std::vector<double> final_trust;
  friend bool operator==(const RunTrace&, const RunTrace&) = default;
};

namespace detail {

template <class Learner>
void run_hedge(Learner learner, const std::vector<TrialRecord>& trials, Rng& rng, RunTrace& trace) {
  for (const auto& trial : trials) {
    TraceStep step;
    step.trial = trial;
    step.trust = learner.trust();
    step.summary = learner.summarize(trial.opinions);
    step.trial.prediction = learner.predict(step.summary, rng);
    step.increments = learner.observe(trial.opinions, trial.feedback(), step.summary);
    trace.steps.push_back(std::move(step));
  }
  trace.final_trust = learner.trust();
}

inline void run_heuristic(std::size_t sources, const std::vector<TrialRecord>& trials, Rng& rng, RunTrace& trace) {
  auto state = HeuristicState::initial(sources);
  for (const auto& trial : trials) {
    TraceStep step;
    step.trial = trial;
    double p = heuristic_prob_positive(state, trial.opinions);
    step.summary = {1.0 - p, p};
    step.trial.prediction = heuristic_predict(state, trial.opinions, rng);
    state = heuristic_update(std::move(state), trial.opinions, trial.feedback());
    trace.steps.push_back(std::move(step));
  }
  trace.final_trust = heuristic_scores(state);
}

}  // namespace detail

// Replays a learner over a fixed trial list. Trial predictions in the input
// are ignored and overwritten with the learner's.
inline std::vector<TraceStep> run_on_trials(const LearnerSpec& spec, std::size_t sources,
                                            const std::vector<TrialRecord>& trials, std::uint64_t learner_seed,
                                            TrustVector* final_trust = nullptr) {
  spec.config.validate();
  RunTrace trace;
  Rng rng = make_rng(derive_seed(learner_seed, 0x1ea));
  switch (spec.kind) {
    case LearnerKind::standard_hedge:
      detail::run_hedge(StandardHedge(sources, spec.config.eta, spec.config.mode), trials, rng, trace);
      break;
    case LearnerKind::delusional_hedge:
      detail::run_hedge(DelusionalHedge(sources, spec.config.eta, spec.config.mode, {spec.config.alpha}), trials, rng,
                        trace);
      break;
    case LearnerKind::accuracy_majority:
      detail::run_heuristic(sources, trials, rng, trace);
      break;
  }
  if (final_trust) *final_trust = std::move(trace.final_trust);
  return std::move(trace.steps);
}

// One learner/environment episode. `seed` replaces environment.seed and also
// seeds the learner's prediction stream, so it alone determines the run.
inline RunTrace run_episode(const LearnerSpec& spec, const EnvironmentConfig& environment, const ScheduleSpec& schedule,
                            std::uint64_t seed) {
  RunTrace trace;
  trace.learner = spec;
  trace.environment = environment;
  trace.environment.seed = seed;
  trace.schedule = schedule;
  trace.seed = seed;
  auto trials = generate_stream(trace.environment, schedule);
  trace.steps = run_on_trials(spec, environment.sources.size(), trials, seed, &trace.final_trust);
  return trace;
}

// --- Regret ------------------------------------------------------------------

struct RegretReport {
  std::size_t horizon = 0;
  double learner_loss = 0.0;           // 0-1 loss of the recorded predictions
  double expected_learner_loss = 0.0;  // sum of q_{-y}: loss of the Bernoulli(q_pos) predictor
  std::vector<double> source_losses;
  double best_source_loss = 0.0;
  double regret = 0.0;
  double expected_regret = 0.0;
  double bound = 0.0;  // sqrt(T ln K / 2)
};

struct UndefinedRegret : std::domain_error {
  using std::domain_error::domain_error;
};

// Losses are counted against ground truth on every trial, labeled or not.
inline RegretReport compute_regret(const RunTrace& trace) {
  if (trace.steps.empty()) throw UndefinedRegret("regret is undefined for a trace without trials");
  const std::size_t k = trace.steps.front().trial.opinions.size();
  RegretReport r;
  r.horizon = trace.steps.size();
  r.source_losses.assign(k, 0.0);
  for (const auto& s : trace.steps) {
    const Label y = s.trial.y;
    if (!s.trial.prediction) throw std::invalid_argument("trace step without a learner prediction");
    r.learner_loss += zero_one_loss(*s.trial.prediction, y);
    r.expected_learner_loss += s.summary.mass(-y);
    for (std::size_t i = 0; i < k; ++i) r.source_losses[i] += zero_one_loss(s.trial.opinions[i], y);
  }
  r.best_source_loss = *std::min_element(r.source_losses.begin(), r.source_losses.end());
  r.regret = r.learner_loss - r.best_source_loss;
  r.expected_regret = r.expected_learner_loss - r.best_source_loss;
  r.bound = std::sqrt(static_cast<double>(r.horizon) * std::log(static_cast<double>(k)) / 2.0);
  return r;
}

// --- Trajectories -------------------------------------------------------------

struct TrajectoryPoint {
  std::size_t n = 0;                    // runs showing this pattern at t
  std::optional<double> frac_pred_pos;  // smoothed share of those runs predicting +1
  std::optional<double> mean_q_pos;     // smoothed mean model probability of +1
};

struct TrajectorySummary {
  std::size_t window = 1;
  std::size_t horizon = 0;
  std::vector<OpinionVector> patterns;
  std::vector<std::vector<TrajectoryPoint>> points;  // [pattern][t - 1]
};

inline constexpr std::size_t kDefaultWindow = 10;

// Per pattern and time step, the fraction of runs predicting +1, smoothed by
// a centered moving average over the steps in the window that have data.
inline TrajectorySummary aggregate_trajectories(const std::vector<RunTrace>& traces, std::size_t window = kDefaultWindow) {
  if (traces.empty()) throw std::invalid_argument("aggregate_trajectories: no traces");
  if (window < 1) throw std::invalid_argument("aggregate_trajectories: window must be >= 1");
  TrajectorySummary out;
  out.window = window;
  out.patterns = reachable_patterns(traces.front().environment);
  for (const auto& tr : traces) {
    out.horizon = std::max(out.horizon, tr.steps.size());
    for (const auto& s : tr.steps)
      if (std::find(out.patterns.begin(), out.patterns.end(), s.trial.opinions) == out.patterns.end())
        out.patterns.push_back(s.trial.opinions);
  }
  const std::size_t P = out.patterns.size(), T = out.horizon;
  std::vector<std::vector<std::size_t>> n(P, std::vector<std::size_t>(T, 0)), pos(P, std::vector<std::size_t>(T, 0));
  std::vector<std::vector<std::vector<double>>> qs(P, std::vector<std::vector<double>>(T));
  for (const auto& tr : traces) {
    for (std::size_t t = 0; t < tr.steps.size(); ++t) {
      const auto& s = tr.steps[t];
      auto p = static_cast<std::size_t>(std::find(out.patterns.begin(), out.patterns.end(), s.trial.opinions) -
                                        out.patterns.begin());
      ++n[p][t];
      pos[p][t] += s.trial.prediction == Label::positive;
      qs[p][t].push_back(s.summary.q_pos);
    }
  }
  // Raw per-step statistics; q sums are taken in sorted order so the result
  // does not depend on trace order.
  std::vector<std::vector<double>> frac(P, std::vector<double>(T)), meanq(P, std::vector<double>(T));
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t t = 0; t < T; ++t) {
      if (!n[p][t]) continue;
      auto& v = qs[p][t];
      std::sort(v.begin(), v.end());
      double sum = 0.0;
      for (double q : v) sum += q;
      frac[p][t] = static_cast<double>(pos[p][t]) / static_cast<double>(n[p][t]);
      meanq[p][t] = sum / static_cast<double>(n[p][t]);
    }
  const std::size_t back = (window - 1) / 2, ahead = window / 2;
  out.points.assign(P, std::vector<TrajectoryPoint>(T));
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t lo = t >= back ? t - back : 0, hi = std::min(T - 1, t + ahead);
      double sf = 0.0, sq = 0.0;
      std::size_t m = 0;
      for (std::size_t u = lo; u <= hi; ++u)
        if (n[p][u]) {
          sf += frac[p][u];
          sq += meanq[p][u];
          ++m;
        }
      auto& pt = out.points[p][t];
      pt.n = n[p][t];
      if (m) {
        pt.frac_pred_pos = sf / static_cast<double>(m);
        pt.mean_q_pos = sq / static_cast<double>(m);
      }
    }
  return out;
}

// --- Final trust ----------------------------------------------------------------

struct SourceStat {
  double mean = 0.0;
  double standard_error = 0.0;
};

inline std::vector<SourceStat> final_trust_summary(const std::vector<RunTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("final_trust_summary: no traces");
  const std::size_t k = traces.front().final_trust.size();
  const double n = static_cast<double>(traces.size());
  std::vector<SourceStat> out(k);
  for (std::size_t i = 0; i < k; ++i) {
    double sum = 0.0;
    for (const auto& tr : traces) sum += tr.final_trust.at(i);
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& tr : traces) ss += (tr.final_trust[i] - mean) * (tr.final_trust[i] - mean);
    out[i].mean = mean;
    out[i].standard_error = traces.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  }
  return out;
}

}  // namespace dhedge
