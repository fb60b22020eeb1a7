#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "dhedge/label.hpp"
#include "dhedge/learners.hpp"
#include "dhedge/rng.hpp"

namespace dhedge {

// Accuracy-majority baseline: follow the source with the best cumulative
// accuracy on labeled trials, break ties by how often a source sided with the
// majority, then uniformly at random.
struct HeuristicState {
  std::vector<std::size_t> correct;   // per source, labeled trials it got right
  std::vector<std::size_t> majority;  // per source, trials it sided with the strict majority
  std::size_t labeled = 0;
  std::size_t total = 0;

  static HeuristicState initial(std::size_t sources) {
    if (sources == 0) throw std::invalid_argument("heuristic needs at least one source");
    return {std::vector<std::size_t>(sources, 0), std::vector<std::size_t>(sources, 0), 0, 0};
  }
  std::size_t sources() const noexcept { return correct.size(); }
  friend bool operator==(const HeuristicState&, const HeuristicState&) = default;
};

// Strict majority opinion; nullopt on an exact split (even K only).
inline std::optional<Label> majority_opinion(std::span<const Label> opinions) {
  std::size_t pos = 0;
  for (Label b : opinions) pos += b == Label::positive;
  const std::size_t neg = opinions.size() - pos;
  if (pos > neg) return Label::positive;
  if (neg > pos) return Label::negative;
  return std::nullopt;
}

inline HeuristicState heuristic_update(HeuristicState state, std::span<const Label> opinions, const Feedback& feedback) {
  if (opinions.size() != state.sources()) throw std::invalid_argument("heuristic_update: opinion count mismatch");
  feedback.validate();
  if (feedback.visible) {
    for (std::size_t k = 0; k < opinions.size(); ++k) state.correct[k] += opinions[k] == *feedback.label;
    ++state.labeled;
  }
  if (auto m = majority_opinion(opinions)) {
    for (std::size_t k = 0; k < opinions.size(); ++k) state.majority[k] += opinions[k] == *m;
  }
  ++state.total;
  return state;
}

// Indices that survive both deterministic tie-break stages. Counts share a
// common denominator, so ratios are compared exactly as integers.
inline std::vector<std::size_t> heuristic_candidates(const HeuristicState& state) {
  std::vector<std::size_t> best;
  auto better = [&](std::size_t a, std::size_t b) {
    // true if a ranks strictly above b
    if (state.labeled > 0 && state.correct[a] != state.correct[b]) return state.correct[a] > state.correct[b];
    return state.majority[a] > state.majority[b];
  };
  for (std::size_t k = 0; k < state.sources(); ++k) {
    if (best.empty() || better(k, best.front())) {
      best.assign(1, k);
    } else if (!better(best.front(), k)) {
      best.push_back(k);
    }
  }
  return best;
}

// Draws from `rng` only when more than one source remains tied.
inline std::size_t heuristic_choose(const HeuristicState& state, Rng& rng) {
  auto best = heuristic_candidates(state);
  return best.size() == 1 ? best.front() : best[uniform_index(rng, best.size())];
}

inline Label heuristic_predict(const HeuristicState& state, std::span<const Label> opinions, Rng& rng) {
  if (opinions.size() != state.sources()) throw std::invalid_argument("heuristic_predict: opinion count mismatch");
  return opinions[heuristic_choose(state, rng)];
}

// Probability of predicting +1, marginalizing the random tie-break.
inline double heuristic_prob_positive(const HeuristicState& state, std::span<const Label> opinions) {
  auto best = heuristic_candidates(state);
  std::size_t pos = 0;
  for (auto k : best) pos += opinions[k] == Label::positive;
  return static_cast<double>(pos) / static_cast<double>(best.size());
}

// Score the heuristic ranks by: accuracy, or majority ratio while accuracy is
// undefined (no labeled trials yet). All zeros before the first trial.
inline std::vector<double> heuristic_scores(const HeuristicState& state) {
  std::vector<double> s(state.sources(), 0.0);
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (state.labeled > 0)
      s[k] = static_cast<double>(state.correct[k]) / static_cast<double>(state.labeled);
    else if (state.total > 0)
      s[k] = static_cast<double>(state.majority[k]) / static_cast<double>(state.total);
  }
  return s;
}

}  // namespace dhedge
