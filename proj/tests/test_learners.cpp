#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dhedge/learners.hpp"
#include "support/generators.hpp"

using namespace dhedge;

namespace {

constexpr auto P = Label::positive;
constexpr auto N = Label::negative;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST(AssignTrust, UniformWhenNoLossYet) {
  for (double eta : {0.0, 0.5, 3.0, 100.0}) {
    auto p = assign_trust(LearnerState::initial(3), eta);
    for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  }
}

TEST(AssignTrust, ZeroRateFreezesTrust) {
  auto p = assign_trust(std::vector<double>{5, 0, 2}, 0.0);
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(AssignTrust, HandEvaluatedSoftmax) {
  // weights proportional to (1/2, 1, 1)
  auto p = assign_trust(std::vector<double>{1, 0, 0}, std::log(2.0));
  EXPECT_NEAR(p[0], 0.2, 1e-15);
  EXPECT_NEAR(p[1], 0.4, 1e-15);
  EXPECT_NEAR(p[2], 0.4, 1e-15);
}

TEST(AssignTrust, RejectsNonFiniteLoss) {
  EXPECT_THROW(assign_trust(std::vector<double>{0, INFINITY}, 1.0), std::invalid_argument);
  EXPECT_THROW(assign_trust(std::vector<double>{0, NAN}, 1.0), std::invalid_argument);
  EXPECT_THROW(assign_trust(std::vector<double>{0, 1}, -1.0), std::invalid_argument);
}

TEST(AssignTrust, LongHorizonDoesNotUnderflow) {
  auto p = assign_trust(std::vector<double>{1e6, 1e6 + 1, 1e6 + 2}, 50.0);
  EXPECT_NEAR(sum(p), 1.0, 1e-12);
  EXPECT_GT(p[0], 0.99);
}

TEST(Summarize, DirectSummation) {
  auto s = summarize_opinions(std::vector<double>{0.5, 0.3, 0.2}, OpinionVector{P, P, N});
  EXPECT_NEAR(s.q_neg, 0.2, 1e-15);
  EXPECT_NEAR(s.q_pos, 0.8, 1e-15);

  s = summarize_opinions(std::vector<double>{0.5, 0.3, 0.2}, OpinionVector{P, P, P});
  EXPECT_EQ(s.q_neg, 0.0);
  EXPECT_NEAR(s.q_pos, 1.0, 1e-15);

  const double third = 1.0 / 3.0;
  s = summarize_opinions(std::vector<double>{third, third, third}, OpinionVector{P, N, N});
  EXPECT_NEAR(s.q_neg, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.q_pos, 1.0 / 3.0, 1e-15);
}

TEST(Summarize, LengthMismatchThrows) {
  EXPECT_THROW(summarize_opinions(std::vector<double>{0.5, 0.5}, OpinionVector{P}), std::invalid_argument);
}

TEST(Predict, DegenerateSummaries) {
  Rng rng = make_rng(1);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(predict_label({0.0, 1.0}, PredictionMode::sampled, rng), P);
    EXPECT_EQ(predict_label({1.0, 0.0}, PredictionMode::sampled, rng), N);
  }
}

TEST(Predict, SampledFrequencyMatchesQ) {
  Rng rng = make_rng(2024);
  int pos = 0;
  for (int i = 0; i < 10000; ++i) pos += predict_label({0.2, 0.8}, PredictionMode::sampled, rng) == P;
  EXPECT_NEAR(pos / 10000.0, 0.8, 0.01);
}

TEST(Predict, DeterministicTieGoesPositive) {
  Rng rng = make_rng(0);
  EXPECT_EQ(predict_label({0.5, 0.5}, PredictionMode::deterministic, rng), P);
  EXPECT_EQ(predict_label({0.51, 0.49}, PredictionMode::deterministic, rng), N);
  EXPECT_EQ(rng, make_rng(0)) << "deterministic mode must not consume draws";
}

TEST(DelusionalLoss, Examples) {
  EXPECT_NEAR(delusional_loss({0.2, 0.8}, P, 1.0), 0.2, 1e-15);
  EXPECT_NEAR(delusional_loss({0.2, 0.8}, N, 0.5), 0.4, 1e-15);
  EXPECT_EQ(delusional_loss({0.2, 0.8}, N, 0.0), 0.0);
  EXPECT_EQ(delusional_loss({0.7, 0.3}, P, 0.0), 0.0);
}

TEST(Observe, LabeledTrialAddsZeroOneLoss) {
  auto s = observe(LearnerState::initial(3), OpinionVector{P, N, P}, Feedback::labeled(P), {1.0 / 3, 2.0 / 3},
                   {1.0, 0.0, PredictionMode::sampled});
  EXPECT_EQ(s.cumulative_losses, (std::vector<double>{0, 1, 0}));
  EXPECT_EQ(s.trial_count, 1u);
}

TEST(Observe, StandardHedgeIgnoresUnlabeledTrials) {
  LearnerState s0{{2.0, 0.5, 1.0}, 7};
  auto s1 = observe(s0, OpinionVector{P, N, P}, Feedback::unlabeled(), {0.3, 0.7}, {1.0, 0.0, PredictionMode::sampled});
  EXPECT_EQ(s1.cumulative_losses, s0.cumulative_losses);
  EXPECT_EQ(s1.trial_count, 8u);
}

TEST(Observe, UnlabeledDelusionalIncrements) {
  auto trust = std::vector<double>{0.5, 0.3, 0.2};
  OpinionVector b{P, P, N};
  auto q = summarize_opinions(trust, b);
  auto inc = loss_increments(b, Feedback::unlabeled(), q, 1.0);
  EXPECT_NEAR(inc[0], 0.2, 1e-15);
  EXPECT_NEAR(inc[1], 0.2, 1e-15);
  EXPECT_NEAR(inc[2], 0.8, 1e-15);
}

TEST(Observe, VisibleWithoutLabelIsAContractViolation) {
  Feedback bad{true, std::nullopt};
  EXPECT_THROW(observe(LearnerState::initial(2), OpinionVector{P, N}, bad, {0.5, 0.5}, {}), std::invalid_argument);
  Feedback bad2{false, P};
  EXPECT_THROW(observe(LearnerState::initial(2), OpinionVector{P, N}, bad2, {0.5, 0.5}, {}), std::invalid_argument);
}

TEST(Config, RejectsNegativeParameters) {
  EXPECT_THROW((LearnerConfig{-1.0, 0.0, PredictionMode::sampled}.validate()), std::invalid_argument);
  EXPECT_THROW((LearnerConfig{1.0, -0.1, PredictionMode::sampled}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((LearnerConfig{0.0, 0.0, PredictionMode::deterministic}.validate()));
}

// --- properties -------------------------------------------------------------------

TEST(LearnerProperty, TrustIsNormalizedAndPositive) {
  for (std::uint64_t seed = 0; seed < 2000; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 8);
    auto losses = g.losses(k);
    // keep the spread small enough that no weight underflows to zero
    const double spread = *std::max_element(losses.begin(), losses.end()) - *std::min_element(losses.begin(), losses.end());
    const double eta = spread > 0 ? std::min(g.rate(), 600.0 / spread) : g.rate();
    auto p = assign_trust(losses, eta);
    EXPECT_NEAR(sum(p), 1.0, 1e-12) << "seed " << seed;
    for (double v : p) {
      EXPECT_GT(v, 0.0) << "seed " << seed;
      EXPECT_LE(v, 1.0) << "seed " << seed;
    }
  }
}

TEST(LearnerProperty, ShiftInvariance) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 6);
    std::vector<double> losses(k);
    for (auto& l : losses) l = g.real(0, 20);
    const double eta = g.real(0, 5), c = g.real(0, 1000);
    auto shifted = losses;
    for (auto& l : shifted) l += c;
    auto a = assign_trust(losses, eta), b = assign_trust(shifted, eta);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(a[i], b[i], 1e-12) << "seed " << seed;
  }
}

TEST(LearnerProperty, SummaryPartitionsUnitMass) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 9);
    std::vector<double> losses(k);
    for (auto& l : losses) l = g.real(0, 30);
    auto q = summarize_opinions(assign_trust(losses, g.real(0, 3)), g.opinions(k));
    EXPECT_NEAR(q.q_neg + q.q_pos, 1.0, 1e-12);
    EXPECT_GE(q.q_neg, 0.0);
    EXPECT_GE(q.q_pos, 0.0);
  }
}

namespace {

struct Run {
  std::vector<LearnerState> states;
  std::vector<TrustVector> trust;
  std::vector<OpinionSummary> summaries;
  std::vector<Label> predictions;
  std::vector<std::vector<double>> increments;
};

template <class H>
Run drive(H learner, const std::vector<TrialRecord>& trials, std::uint64_t seed) {
  Run r;
  Rng rng = make_rng(seed);
  for (const auto& t : trials) {
    r.trust.push_back(learner.trust());
    auto s = learner.summarize(t.opinions);
    r.summaries.push_back(s);
    r.predictions.push_back(learner.predict(s, rng));
    r.increments.push_back(learner.observe(t.opinions, t.feedback(), s));
    r.states.push_back(learner.state());
  }
  r.trust.push_back(learner.trust());
  return r;
}

}  // namespace

TEST(LearnerProperty, AlphaZeroReducesToStandardHedgeBitForBit) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 5);
    auto trials = g.sequence(g.size(1, 120), k, g.real(0, 1));
    const double eta = g.rate();
    const auto mode = g.coin() ? PredictionMode::sampled : PredictionMode::deterministic;
    auto a = drive(StandardHedge(k, eta, mode), trials, seed);
    auto b = drive(DelusionalHedge(k, eta, mode, {0.0}), trials, seed);
    ASSERT_EQ(a.states, b.states) << "seed " << seed;
    ASSERT_EQ(a.trust, b.trust) << "seed " << seed;
    ASSERT_EQ(a.predictions, b.predictions) << "seed " << seed;
  }
}

TEST(LearnerProperty, StandardHedgeIdleOnUnlabeledTrials) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 5);
    auto trials = g.sequence(60, k, 0.4);
    StandardHedge h(k, g.rate());
    Rng rng = make_rng(seed);
    for (const auto& t : trials) {
      const auto before = h.state().cumulative_losses;
      const auto trust_before = h.trust();
      auto s = h.summarize(t.opinions);
      h.observe(t.opinions, t.feedback(), s);
      if (!t.visible) {
        ASSERT_EQ(h.state().cumulative_losses, before);
        ASSERT_EQ(h.trust(), trust_before);
      }
    }
  }
}

TEST(LearnerProperty, TwinSourcesStayTied) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(2, 5);
    auto trials = g.sequence(80, k, g.real(0, 1));
    for (auto& t : trials) t.opinions[1] = t.opinions[0];
    const double eta = g.rate(), alpha = g.real(0, 3);
    auto a = drive(StandardHedge(k, eta), trials, seed);
    auto b = drive(DelusionalHedge(k, eta, PredictionMode::sampled, {alpha}), trials, seed);
    for (const auto* r : {&a, &b}) {
      for (const auto& s : r->states) ASSERT_EQ(s.cumulative_losses[0], s.cumulative_losses[1]);
      for (const auto& p : r->trust) ASSERT_EQ(p[0], p[1]);
    }
  }
}

TEST(LearnerProperty, IncrementBounds) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 6);
    auto trials = g.sequence(50, k, 0.5);
    const double alpha = g.real(0, 4);
    auto r = drive(DelusionalHedge(k, g.rate(), PredictionMode::sampled, {alpha}), trials, seed);
    for (std::size_t t = 0; t < trials.size(); ++t)
      for (double inc : r.increments[t]) {
        if (trials[t].visible) {
          ASSERT_TRUE(inc == 0.0 || inc == 1.0);
        } else {
          ASSERT_GE(inc, 0.0);
          ASSERT_LE(inc, alpha);
        }
      }
    for (std::size_t t = 1; t < r.states.size(); ++t)
      for (std::size_t i = 0; i < k; ++i)
        ASSERT_GE(r.states[t].cumulative_losses[i], r.states[t - 1].cumulative_losses[i]);
  }
}

TEST(LearnerProperty, PermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(2, 5);
    auto trials = g.sequence(40, k, g.real(0, 1));
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), g.rng);
    auto permuted = trials;
    for (auto& t : permuted)
      for (std::size_t i = 0; i < k; ++i) t.opinions[i] = trials[&t - permuted.data()].opinions[perm[i]];
    const double eta = g.real(0, 3), alpha = g.real(0, 2);
    auto a = drive(DelusionalHedge(k, eta, PredictionMode::deterministic, {alpha}), trials, seed);
    auto b = drive(DelusionalHedge(k, eta, PredictionMode::deterministic, {alpha}), permuted, seed);
    for (std::size_t t = 0; t < a.trust.size(); ++t)
      for (std::size_t i = 0; i < k; ++i) ASSERT_NEAR(b.trust[t][i], a.trust[t][perm[i]], 1e-12);
    for (std::size_t t = 0; t < a.states.size(); ++t) {
      ASSERT_NEAR(a.summaries[t].q_pos, b.summaries[t].q_pos, 1e-12);
      for (std::size_t i = 0; i < k; ++i)
        ASSERT_NEAR(b.states[t].cumulative_losses[i], a.states[t].cumulative_losses[perm[i]], 1e-9);
    }
  }
}

TEST(LearnerProperty, DeterministicReplay) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    gen::Source g(seed);
    const auto k = g.size(1, 5);
    auto trials = g.sequence(100, k, 0.5);
    const double eta = g.rate(), alpha = g.real(0, 2);
    auto a = drive(DelusionalHedge(k, eta, PredictionMode::sampled, {alpha}), trials, seed);
    auto b = drive(DelusionalHedge(k, eta, PredictionMode::sampled, {alpha}), trials, seed);
    ASSERT_EQ(a.predictions, b.predictions);
    ASSERT_EQ(a.states, b.states);
  }
}

TEST(Hedge, TrustUsedForATrialPrecedesItsLoss) {
  StandardHedge h(2, 1.0);
  auto s = h.summarize(OpinionVector{P, N});
  EXPECT_DOUBLE_EQ(s.q_pos, 0.5);
  h.observe(OpinionVector{P, N}, Feedback::labeled(N), s);
  EXPECT_LT(h.trust()[0], h.trust()[1]);
}
