#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dhedge/label.hpp"
#include "dhedge/rng.hpp"

namespace dhedge {

enum class PredictionMode { sampled, deterministic };

struct LearnerConfig {
  double eta = 1.0;    // learning rate
  double alpha = 0.0;  // weight of the loss hallucinated on unlabeled trials
  PredictionMode mode = PredictionMode::sampled;

  void validate() const {
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("eta must be finite and >= 0");
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  }
  friend bool operator==(const LearnerConfig&, const LearnerConfig&) = default;
};

// Cumulative per-source losses; the sufficient statistic for trust.
struct LearnerState {
  std::vector<double> cumulative_losses;
  std::size_t trial_count = 0;

  static LearnerState initial(std::size_t sources) {
    if (sources == 0) throw std::invalid_argument("a learner needs at least one source");
    return LearnerState{std::vector<double>(sources, 0.0), 0};
  }
  std::size_t sources() const noexcept { return cumulative_losses.size(); }

  friend bool operator==(const LearnerState&, const LearnerState&) = default;
};

using TrustVector = std::vector<double>;

// Total trust behind each label.
struct OpinionSummary {
  double q_neg = 0.0;
  double q_pos = 0.0;

  double mass(Label l) const noexcept { return l == Label::positive ? q_pos : q_neg; }
  friend bool operator==(const OpinionSummary&, const OpinionSummary&) = default;
};

struct Feedback {
  bool visible = false;
  std::optional<Label> label;

  static Feedback labeled(Label y) { return {true, y}; }
  static Feedback unlabeled() { return {false, std::nullopt}; }

  void validate() const {
    if (visible != label.has_value())
      throw std::invalid_argument(visible ? "visible feedback without a label"
                                          : "label present on an unlabeled trial");
  }
};

// Softmax of negated cumulative losses, written into `trust`. The minimum
// loss is subtracted before exponentiation so that long horizons never
// underflow every weight.
inline void assign_trust_into(std::span<const double> cumulative_losses, double eta, std::span<double> trust) {
  if (cumulative_losses.empty()) throw std::invalid_argument("assign_trust: no sources");
  if (trust.size() != cumulative_losses.size()) throw std::invalid_argument("assign_trust: output size mismatch");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw std::invalid_argument("assign_trust: eta must be finite and >= 0");
  double lo = cumulative_losses[0];
  for (double l : cumulative_losses) {
    if (!std::isfinite(l)) throw std::invalid_argument("assign_trust: non-finite cumulative loss");
    lo = std::min(lo, l);
  }
  double total = 0.0;
  for (std::size_t k = 0; k < trust.size(); ++k) {
    trust[k] = std::exp((lo - cumulative_losses[k]) * eta);
    total += trust[k];
  }
  for (double& p : trust) p /= total;
}

inline TrustVector assign_trust(std::span<const double> cumulative_losses, double eta) {
  TrustVector trust(cumulative_losses.size());
  assign_trust_into(cumulative_losses, eta, trust);
  return trust;
}

inline TrustVector assign_trust(const LearnerState& state, double eta) {
  return assign_trust(std::span<const double>(state.cumulative_losses), eta);
}

inline OpinionSummary summarize_opinions(std::span<const double> trust, std::span<const Label> opinions) {
  if (trust.size() != opinions.size())
    throw std::invalid_argument("summarize_opinions: " + std::to_string(trust.size()) + " trust entries but " +
                                std::to_string(opinions.size()) + " opinions");
  OpinionSummary s;
  for (std::size_t k = 0; k < trust.size(); ++k) {
    if (opinions[k] == Label::positive)
      s.q_pos += trust[k];
    else
      s.q_neg += trust[k];
  }
  // rounding in the sum can overshoot 1 by an ulp
  s.q_neg = std::min(s.q_neg, 1.0);
  s.q_pos = std::min(s.q_pos, 1.0);
  return s;
}

// Sampled mode always consumes exactly one draw from the stream.
inline Label predict_label(const OpinionSummary& summary, PredictionMode mode, Rng& rng) {
  if (mode == PredictionMode::deterministic) return summary.q_pos >= 0.5 ? Label::positive : Label::negative;
  return bernoulli(rng, summary.q_pos) ? Label::positive : Label::negative;
}

inline Label predict_label(const OpinionSummary& summary, const LearnerConfig& config, Rng& rng) {
  return predict_label(summary, config.mode, rng);
}

// alpha times the trust held by sources that disagree with `opinion`.
inline double delusional_loss(const OpinionSummary& summary, Label opinion, double alpha) noexcept {
  return alpha * summary.mass(-opinion);
}

inline double zero_one_loss(Label opinion, Label truth) noexcept { return opinion != truth ? 1.0 : 0.0; }

// Per-source loss for one trial. Unlabeled trials with alpha == 0 yield
// all zeros.
inline std::vector<double> loss_increments(std::span<const Label> opinions, const Feedback& feedback,
                                           const OpinionSummary& summary, double alpha) {
  feedback.validate();
  std::vector<double> inc(opinions.size(), 0.0);
  if (feedback.visible) {
    for (std::size_t k = 0; k < opinions.size(); ++k) inc[k] = zero_one_loss(opinions[k], *feedback.label);
  } else if (alpha > 0.0) {
    for (std::size_t k = 0; k < opinions.size(); ++k) inc[k] = delusional_loss(summary, opinions[k], alpha);
  }
  return inc;
}

// Step 7 of the (delusional) hedge loop. `summary` must come from the trust
// implied by `state`, i.e. before this trial's losses are added.
inline LearnerState observe(LearnerState state, std::span<const Label> opinions, const Feedback& feedback,
                            const OpinionSummary& summary, const LearnerConfig& config) {
  if (opinions.size() != state.sources()) throw std::invalid_argument("observe: opinion count does not match learner");
  feedback.validate();
  if (feedback.visible || config.alpha > 0.0) {
    auto inc = loss_increments(opinions, feedback, summary, config.alpha);
    for (std::size_t k = 0; k < inc.size(); ++k) state.cumulative_losses[k] += inc[k];
  }
  ++state.trial_count;
  return state;
}

// --- Learner objects -------------------------------------------------------

// How a hedge learner charges sources on a trial whose label is withheld.
template <class R>
concept UnlabeledRule = requires(const R r, const OpinionSummary& s, Label b) {
  { R::updates_unlabeled } -> std::convertible_to<bool>;
  { r.unlabeled_loss(s, b) } -> std::convertible_to<double>;
};

// The fully supervised learner: unlabeled trials leave the losses untouched.
struct StandardUpdate {
  static constexpr bool updates_unlabeled = false;
  double unlabeled_loss(const OpinionSummary&, Label) const noexcept { return 0.0; }
};

// Hallucinated expected 0-1 loss, applied on every unlabeled trial
// (including alpha == 0, where every increment is +0.0).
struct DelusionalUpdate {
  static constexpr bool updates_unlabeled = true;
  double alpha = 1.0;
  double unlabeled_loss(const OpinionSummary& s, Label b) const noexcept { return delusional_loss(s, b, alpha); }
};

template <UnlabeledRule Rule>
class Hedge {
 public:
  Hedge(std::size_t sources, double eta, PredictionMode mode = PredictionMode::sampled, Rule rule = {})
      : state_(LearnerState::initial(sources)), eta_(eta), mode_(mode), rule_(rule) {
    trust_ = assign_trust(state_, eta_);
  }

  const LearnerState& state() const noexcept { return state_; }
  const TrustVector& trust() const noexcept { return trust_; }
  double eta() const noexcept { return eta_; }
  const Rule& rule() const noexcept { return rule_; }

  OpinionSummary summarize(std::span<const Label> opinions) const { return summarize_opinions(trust_, opinions); }
  Label predict(const OpinionSummary& s, Rng& rng) const { return predict_label(s, mode_, rng); }

  // Applies the trial's losses and returns the per-source increments.
  std::vector<double> observe(std::span<const Label> opinions, const Feedback& feedback, const OpinionSummary& s) {
    if (opinions.size() != state_.sources()) throw std::invalid_argument("Hedge::observe: opinion count mismatch");
    feedback.validate();
    std::vector<double> inc(opinions.size(), 0.0);
    ++state_.trial_count;
    if (feedback.visible) {
      for (std::size_t k = 0; k < inc.size(); ++k) inc[k] = zero_one_loss(opinions[k], *feedback.label);
    } else if constexpr (Rule::updates_unlabeled) {
      for (std::size_t k = 0; k < inc.size(); ++k) inc[k] = rule_.unlabeled_loss(s, opinions[k]);
    } else {
      return inc;
    }
    for (std::size_t k = 0; k < inc.size(); ++k) state_.cumulative_losses[k] += inc[k];
    trust_ = assign_trust(state_, eta_);
    return inc;
  }

 private:
  LearnerState state_;
  TrustVector trust_;
  double eta_;
  PredictionMode mode_;
  Rule rule_;
};

using StandardHedge = Hedge<StandardUpdate>;
using DelusionalHedge = Hedge<DelusionalUpdate>;

}  // namespace dhedge
