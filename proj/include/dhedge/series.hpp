#pragma once

#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "dhedge/csv.hpp"
#include "dhedge/evaluation.hpp"
#include "dhedge/fitting.hpp"
#include "dhedge/session.hpp"
#include "dhedge/storage.hpp"

namespace dhedge {

// Tidy trajectory series: one row per pattern x t x statistic. Statistics are
// n (raw count at t), frac_pred_pos and mean_q_pos (smoothed). A smoothed
// statistic is written as an empty field when its window holds no data.
inline void export_trajectory_csv(const TrajectorySummary& s, std::ostream& out) {
  csv::Writer w(out, {"pattern", "t", "statistic", "value"});
  for (std::size_t p = 0; p < s.patterns.size(); ++p) {
    const auto key = pattern_key(s.patterns[p]);
    for (std::size_t t = 0; t < s.horizon; ++t) {
      const auto& pt = s.points[p][t];
      const auto ts = std::to_string(t + 1);
      w.row({key, ts, "n", csv::format_number(pt.n)});
      w.row({key, ts, "frac_pred_pos", pt.frac_pred_pos ? csv::format_number(*pt.frac_pred_pos) : ""});
      w.row({key, ts, "mean_q_pos", pt.mean_q_pos ? csv::format_number(*pt.mean_q_pos) : ""});
    }
  }
}

struct LabeledFinalTrust {
  std::string learner;
  std::vector<std::string> source_names;
  std::vector<SourceStat> stats;
};

inline void export_final_trust_csv(const std::vector<LabeledFinalTrust>& rows, std::ostream& out) {
  csv::Writer w(out, {"learner", "source", "statistic", "value"});
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.stats.size(); ++k) {
      w.row({r.learner, r.source_names.at(k), "mean", csv::format_number(r.stats[k].mean)});
      w.row({r.learner, r.source_names.at(k), "standard_error", csv::format_number(r.stats[k].standard_error)});
    }
}

inline void export_regret_csv(const std::vector<RunTrace>& traces, std::ostream& out) {
  csv::Writer w(out, {"learner", "seed", "horizon", "learner_loss", "expected_learner_loss", "best_source_loss", "regret",
                      "expected_regret", "bound"});
  for (const auto& tr : traces) {
    const auto r = compute_regret(tr);
    w.row({to_string(tr.learner.kind), std::to_string(tr.seed), csv::format_number(r.horizon),
           csv::format_number(r.learner_loss), csv::format_number(r.expected_learner_loss),
           csv::format_number(r.best_source_loss), csv::format_number(r.regret), csv::format_number(r.expected_regret),
           csv::format_number(r.bound)});
  }
}

inline void export_fit_csv(const PopulationReport& rep, std::ostream& out) {
  csv::Writer w(out, {"session_id", "condition", "model", "eta_hat", "alpha_hat", "log_likelihood", "evaluations",
                      "converged", "heuristic_agreement"});
  for (const auto& f : rep.sessions)
    for (const FitResult* r : {&f.standard, &f.delusional})
      w.row({f.session_id, f.condition, to_string(r->model), csv::format_number(r->eta_hat),
             csv::format_number(r->alpha_hat), csv::format_number(r->log_likelihood), csv::format_number(r->evaluations),
             r->converged ? "true" : "false", csv::format_number(f.heuristic_agreement)});
}

// Trial-level and ratings tables for external statistics.
inline void export_session_trials_csv(const std::vector<SessionData>& sessions, std::ostream& out) {
  csv::Writer w(out, {"session_id", "condition", "t", "source", "opinion", "y", "visible", "prediction"});
  for (const auto& s : sessions)
    for (const auto& t : s.trials)
      for (std::size_t k = 0; k < t.opinions.size(); ++k)
        w.row({s.session_id, s.condition, std::to_string(t.t), s.environment.sources[k].display_name,
               std::to_string(to_int(t.opinions[k])), std::to_string(to_int(t.y)), t.visible ? "1" : "0",
               t.prediction ? std::to_string(to_int(*t.prediction)) : ""});
}

inline void export_ratings_csv(const std::vector<SessionData>& sessions, std::ostream& out) {
  csv::Writer w(out, {"session_id", "condition", "source", "measure", "value"});
  for (const auto& s : sessions) {
    if (!s.ratings) continue;
    const auto& r = *s.ratings;
    for (std::size_t k = 0; k < s.sources(); ++k) {
      const auto& name = s.environment.sources[k].display_name;
      w.row({s.session_id, s.condition, name, "chosen_most_accurate", r.most_accurate == k ? "1" : "0"});
      w.row({s.session_id, s.condition, name, "chosen_most_majority", r.most_majority == k ? "1" : "0"});
      for (const char* dim : kRatingDimensions) w.row({s.session_id, s.condition, name, dim, std::to_string(r.sliders.at(dim).at(k))});
    }
  }
}

template <class Fn>
void write_file(const std::filesystem::path& path, Fn&& body) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  body(out);
  if (!out.flush()) throw IoError("write to '" + path.string() + "' failed");
}

}  // namespace dhedge
