#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <thread>

#include "dhedge/dhedge.hpp"
#include "dhedge/service.hpp"
#include "support/generators.hpp"
#include "support/golden.hpp"
#include "support/participant.hpp"

using namespace dhedge;
using participant::json;
using participant::TempDir;
namespace fs = std::filesystem;

namespace {

ServiceConfig config_in(const fs::path& dir, std::uint64_t seed = 1, std::string experiment = "exp1") {
  ServiceConfig c;
  c.data_dir = dir;
  c.seed = seed;
  c.experiment = std::move(experiment);
  auto tick = std::make_shared<std::int64_t>(1700000000000);
  c.clock = [tick] { return *tick += 1000; };
  return c;
}

std::string id_of(const json& d) { return d["session_id"].get<std::string>(); }

int status_of(const std::function<void()>& call) {
  try {
    call();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 200;
}

ServiceError error_of(const std::function<void()>& call) {
  try {
    call();
  } catch (const ServiceError& e) {
    return e;
  }
  throw std::logic_error("expected a ServiceError");
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) ++n;
  return n;
}

SessionData exported(ExperimentService& svc, const std::string& id) { return session_from_string(svc.export_session(id)); }

// Keys that would reveal the stimulus or the hidden label.
void expect_hidden(const json& j, const std::string& where) {
  static const std::set<std::string> banned = {"x", "y", "theta", "theta_star", "environment", "schedule",
                                               "trials", "seed", "provenance", "stimulus_low", "stimulus_high"};
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      EXPECT_FALSE(banned.count(it.key())) << where << " exposes '" << it.key() << "': " << j.dump();
      expect_hidden(it.value(), where);
    }
  } else if (j.is_array()) {
    for (const auto& e : j) expect_hidden(e, where);
  }
}

}  // namespace

// --- create_session ------------------------------------------------------------

TEST(Create, AutoAssignBalancesFiftySessionsOverFiveConditions) {
  TempDir dir("assign");
  ExperimentService svc(config_in(dir.path()));
  std::map<std::string, int> counts;
  for (int i = 0; i < 50; ++i) ++counts[svc.create_session({{"condition", "auto"}})["condition"].get<std::string>()];
  ASSERT_EQ(counts.size(), 5u);
  for (const auto& [tag, n] : counts) EXPECT_EQ(n, 10) << tag;
  for (const auto& [tag, n] : svc.assignment_counts()) EXPECT_EQ(n, 10u) << tag;
}

TEST(Create, AutoAssignStaysBalancedAfterExplicitChoices) {
  TempDir dir("assign2");
  ExperimentService svc(config_in(dir.path(), 2));
  for (int i = 0; i < 3; ++i) svc.create_session({{"condition", "exp1:p=0"}});
  std::map<std::string, int> counts;
  for (int i = 0; i < 17; ++i) ++counts[svc.create_session(json::object())["condition"].get<std::string>()];
  EXPECT_EQ(counts["exp1:p=0"], 1);
  for (const char* t : {"exp1:p=0.25", "exp1:p=0.5", "exp1:p=0.75", "exp1:p=1"}) EXPECT_EQ(counts[t], 4) << t;
}

TEST(Create, TieBreakIsRandomNotFixedOrder) {
  std::set<std::string> firsts;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    TempDir dir("tie");
    ExperimentService svc(config_in(dir.path(), seed));
    firsts.insert(svc.create_session(json::object())["condition"].get<std::string>());
  }
  EXPECT_GE(firsts.size(), 4u);
}

TEST(Create, ExplicitExp2MEqualsNFollowsTheConditionPattern) {
  TempDir dir("exp2");
  ExperimentService svc(config_in(dir.path(), 3, "exp2"));
  auto d = svc.create_session({{"condition", "exp2:m-equals-n"}});
  EXPECT_EQ(d["condition"], "exp2:m-equals-n");
  participant::answer(svc, id_of(d), participant::majority);
  auto s = exported(svc, id_of(d));
  ASSERT_EQ(s.trials.size(), 100u);
  for (const auto& t : s.trials) {
    if (t.t <= 5) {
      EXPECT_TRUE(t.visible) << t.t;
      continue;
    }
    EXPECT_FALSE(t.visible) << t.t;
    EXPECT_EQ(t.opinions[kMiddle], t.opinions[kNear]) << t.t;
    EXPECT_NE(t.opinions[kFar], t.opinions[kMiddle]) << t.t;
  }
}

TEST(Create, DuplicateCallsGiveDistinctIds) {
  TempDir dir("dup");
  ExperimentService svc(config_in(dir.path()));
  std::set<std::string> ids;
  for (int i = 0; i < 200; ++i) ids.insert(id_of(svc.create_session({{"condition", "exp1:p=0.5"}})));
  EXPECT_EQ(ids.size(), 200u);
  for (const auto& id : ids) EXPECT_EQ(id.size(), 32u);
}

TEST(Create, UnknownConditionIsA400) {
  TempDir dir("unknown");
  ExperimentService svc(config_in(dir.path()));
  for (const char* tag : {"exp3", "exp1:p=2", "exp1:p=", "EXP2:M-EQUALS-N"}) {
    auto e = error_of([&] { svc.create_session({{"condition", tag}}); });
    EXPECT_EQ(e.status(), 400) << tag;
    EXPECT_EQ(e.code(), "unknown_condition");
  }
  EXPECT_EQ(status_of([&] { svc.create_session({{"condition", 5}}); }), 400);
  EXPECT_THROW(ExperimentService(config_in(dir.path(), 1, "exp9")), std::invalid_argument);
}

TEST(Create, DescriptorShowsWhatTheClientNeeds) {
  TempDir dir("desc");
  ExperimentService svc(config_in(dir.path()));
  auto d = svc.create_session(json::object());
  EXPECT_EQ(d["total"], 100);
  EXPECT_EQ(d["sources"].size(), 3u);
  EXPECT_EQ(d["rating_dimensions"].size(), 4u);
  EXPECT_EQ(d["slider_range"], json::array({-100, 100}));
  EXPECT_EQ(d["next"], (json{{"event", "prediction"}, {"t", 1}}));
  std::set<std::string> words = {d["choices"][0], d["choices"][1]};
  EXPECT_EQ(words, (std::set<std::string>{"fresh", "jam"}));
  expect_hidden(d, "descriptor");
}

// --- get_trial / post_prediction --------------------------------------------------

TEST(Trials, ViewMapsCanonicalOpinionsThroughTheCounterbalance) {
  TempDir dir("view");
  ExperimentService svc(config_in(dir.path(), 9));
  int swapped = 0, permuted = 0;
  for (int n = 0; n < 12; ++n) {
    auto d = svc.create_session(json::object());
    const auto id = id_of(d);
    std::vector<json> views;
    for (int i = 0; i < 10; ++i) {
      views.push_back(svc.get_trial(id));
      svc.post_prediction(id, {{"t", views.back()["t"]}, {"choice", participant::majority(views.back())}});
    }
    const auto s = exported(svc, id);
    const auto& cb = s.counterbalance;
    swapped += cb.word_negative == "jam";
    permuted += cb.source_order != std::vector<std::size_t>{0, 1, 2};
    for (std::size_t i = 0; i < views.size(); ++i) {
      const auto& trial = s.trials[i];
      for (std::size_t pos = 0; pos < 3; ++pos) {
        const auto k = cb.source_order[pos];
        EXPECT_EQ(views[i]["opinions"][pos]["avatar"], cb.avatars[k]);
        EXPECT_EQ(views[i]["opinions"][pos]["word"], cb.word(trial.opinions[k]));
      }
      EXPECT_EQ(trial.opinions, source_opinions(trial.x, s.environment)) << "log holds canonical opinions";
      const std::string said = participant::majority(views[i]);
      EXPECT_EQ(*trial.prediction, said == cb.word_positive ? Label::positive : Label::negative);
    }
  }
  EXPECT_GT(swapped, 0);
  EXPECT_LT(swapped, 12);
  EXPECT_GT(permuted, 0);
}

TEST(Trials, IdentityCounterbalanceGivesThreeCardsInCanonicalOrder) {
  TempDir dir("ident");
  auto cfg = config_in(dir.path(), 4);
  cfg.counterbalance = Counterbalance::identity(3);
  ExperimentService svc(cfg);
  const auto id = id_of(svc.create_session({{"condition", "exp1:p=1"}}));
  for (int i = 0; i < 100; ++i) {
    auto v = svc.get_trial(id);
    ASSERT_EQ(v["opinions"].size(), 3u);
    svc.post_prediction(id, {{"t", v["t"]}, {"choice", "fresh"}});
    const auto t = exported(svc, id).trials.back();
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(v["opinions"][k]["avatar"], "avatar-" + std::to_string(k + 1));
      EXPECT_EQ(v["opinions"][k]["word"], t.opinions[k] == Label::positive ? "jam" : "fresh");
    }
  }
}

TEST(Trials, LabeledTrialsRevealTheLabelAndUnlabeledOnesDoNot) {
  TempDir dir("label");
  ExperimentService svc(config_in(dir.path(), 5));
  const auto id = id_of(svc.create_session({{"condition", "exp1:p=0.5"}}));
  int labeled = 0, unlabeled = 0;
  for (int i = 0; i < 100; ++i) {
    auto v = svc.get_trial(id);
    auto r = svc.post_prediction(id, {{"t", v["t"]}, {"choice", participant::follow_first(v)}});
    const auto s = exported(svc, id);
    const auto& t = s.trials.back();
    EXPECT_EQ(r["labeled"], t.visible);
    if (t.visible) {
      ++labeled;
      EXPECT_EQ(r["label"], s.counterbalance.word(t.y));
    } else {
      ++unlabeled;
      EXPECT_FALSE(r.contains("label")) << r.dump();
    }
  }
  EXPECT_GT(labeled, 25);
  EXPECT_GT(unlabeled, 25);
}

TEST(Trials, InvalidPredictionsAreValidationErrors) {
  TempDir dir("invalid");
  ExperimentService svc(config_in(dir.path()));
  const auto id = id_of(svc.create_session(json::object()));
  for (const json& body : {json{{"t", 1}, {"choice", "banana"}}, json{{"t", 1}}, json{{"t", 1}, {"choice", 1}},
                           json{{"choice", "jam"}}, json{{"t", -1}, {"choice", "jam"}}, json{{"t", "1"}, {"choice", "jam"}},
                           json::array()}) {
    auto e = error_of([&] { svc.post_prediction(id, body); });
    EXPECT_EQ(e.status(), 400) << body.dump();
  }
  EXPECT_EQ(svc.get_trial(id)["t"], 1) << "rejected requests do not advance the cursor";
}

TEST(Trials, UnknownSessionIsNotFound) {
  TempDir dir("404");
  ExperimentService svc(config_in(dir.path()));
  EXPECT_EQ(status_of([&] { svc.get_trial("deadbeef"); }), 404);
  EXPECT_EQ(status_of([&] { svc.post_prediction("deadbeef", {{"t", 1}, {"choice", "jam"}}); }), 404);
  EXPECT_EQ(status_of([&] { svc.post_ratings("deadbeef", json::object()); }), 404);
  EXPECT_EQ(status_of([&] { svc.export_session("deadbeef"); }), 404);
}

// --- protocol order ------------------------------------------------------------------

TEST(Protocol, OutOfOrderEventsAreConflictsNamingTheExpectedEvent) {
  TempDir dir("order");
  ExperimentService svc(config_in(dir.path()));
  auto d = svc.create_session(json::object());
  const auto id = id_of(d);
  auto e = error_of([&] { svc.post_prediction(id, {{"t", 2}, {"choice", "jam"}}); });
  EXPECT_EQ(e.status(), 409);
  EXPECT_EQ(e.body()["expected"], (json{{"event", "prediction"}, {"t", 1}}));
  EXPECT_NE(std::string(e.what()).find("trial 1"), std::string::npos);

  e = error_of([&] { svc.post_ratings(id, participant::ratings_for(d)); });
  EXPECT_EQ(e.status(), 409);
  EXPECT_EQ(e.code(), "premature_ratings");

  participant::answer(svc, id, participant::majority);
  e = error_of([&] { svc.get_trial(id); });
  EXPECT_EQ(e.status(), 409);
  EXPECT_EQ(e.body()["expected"], (json{{"event", "ratings"}}));
  EXPECT_EQ(status_of([&] { svc.post_prediction(id, {{"t", 100}, {"choice", "jam"}}); }), 409);

  svc.post_ratings(id, participant::ratings_for(d));
  EXPECT_EQ(error_of([&] { svc.get_trial(id); }).code(), "session_complete");
  EXPECT_EQ(error_of([&] { svc.post_prediction(id, {{"t", 101}, {"choice", "jam"}}); }).code(), "session_complete");
  EXPECT_EQ(error_of([&] { svc.post_ratings(id, participant::ratings_for(d)); }).code(), "session_complete");
}

// Random event sequences never corrupt the log: the export always validates
// and its trials are a prefix of the pre-generated stream.
TEST(Protocol, RandomEventSequencesKeepTheLogAValidPrefix) {
  TempDir dir("fuzz");
  ExperimentService svc(config_in(dir.path(), 11));
  gen::Source g(11);
  std::vector<json> sessions;
  for (int i = 0; i < 4; ++i) sessions.push_back(svc.create_session(json::object()));
  for (int step = 0; step < 2500; ++step) {
    const auto& d = sessions[g.size(0, sessions.size() - 1)];
    const auto id = id_of(d);
    const auto words = d["choices"];
    try {
      switch (g.size(0, 5)) {
        case 0: expect_hidden(svc.get_trial(id), "trial"); break;
        case 1:
        case 2: {
          json v = svc.get_trial(id);
          std::size_t t = v["t"].get<std::size_t>();
          if (g.coin(0.2)) t += g.size(1, 3);
          if (g.coin(0.1) && t > 1) t -= 1;
          json body = {{"t", t}, {"choice", g.coin(0.05) ? json("kiwi") : words[g.size(0, 1)]}};
          expect_hidden(svc.post_prediction(id, body, g.coin(0.3) ? "k" + std::to_string(g.size(0, 20)) : ""), "prediction");
          break;
        }
        case 3: {
          json r = participant::ratings_for(d, static_cast<int>(g.size(0, 220)) - 110);
          expect_hidden(svc.post_ratings(id, r), "ratings");
          break;
        }
        case 4: expect_hidden(svc.health(), "health"); break;
        default: participant::answer(svc, id, participant::follow_first, g.size(1, 30)); break;
      }
    } catch (const ServiceError& e) {
      EXPECT_TRUE(e.status() == 400 || e.status() == 409 || e.status() == 422) << e.status() << " " << e.what();
      expect_hidden(e.body(), "error");
    }
  }
  for (const auto& d : sessions) {
    const auto s = exported(svc, id_of(d));
    EXPECT_TRUE(session_issues(s).empty());
    auto stream = generate_stream(s.environment, s.schedule);
    for (std::size_t i = 0; i < s.trials.size(); ++i) {
      auto t = s.trials[i];
      t.prediction.reset();
      t.timestamp_ms.reset();
      EXPECT_EQ(t, stream[i]);
    }
  }
}

// --- idempotency -------------------------------------------------------------------------

TEST(Idempotency, ReplayReturnsTheSameResponseWithoutANewLogLine) {
  TempDir dir("idem");
  ExperimentService svc(config_in(dir.path()));
  auto d = svc.create_session(json::object());
  const auto id = id_of(d);
  const json body = {{"t", 1}, {"choice", d["choices"][0]}};
  auto first = svc.post_prediction(id, body, "abc");
  const auto lines = line_count(svc.log_path(id));
  auto again = svc.post_prediction(id, body, "abc");
  EXPECT_EQ(again, first);
  EXPECT_EQ(line_count(svc.log_path(id)), lines);
  EXPECT_EQ(svc.get_trial(id)["t"], 2);

  auto e = error_of([&] { svc.post_prediction(id, {{"t", 2}, {"choice", d["choices"][1]}}, "abc"); });
  EXPECT_EQ(e.status(), 422);
  EXPECT_EQ(exported(svc, id).trials.size(), 1u);

  participant::answer(svc, id, participant::majority);
  const auto ratings = participant::ratings_for(d, 5);
  auto receipt = svc.post_ratings(id, ratings, "r1");
  EXPECT_EQ(svc.post_ratings(id, ratings, "r1"), receipt);
  EXPECT_EQ(status_of([&] { svc.post_ratings(id, participant::ratings_for(d, 6), "r1"); }), 422);
}

// --- ratings ------------------------------------------------------------------------------

TEST(Ratings, CompleteBlockGivesAReceiptAndAFittableFile) {
  TempDir dir("ratings");
  ExperimentService svc(config_in(dir.path()));
  auto d = svc.create_session({{"condition", "exp1:p=0.25"}});
  const auto id = id_of(d);
  participant::answer(svc, id, participant::majority);
  auto receipt = svc.post_ratings(id, participant::ratings_for(d, 40));
  EXPECT_EQ(receipt["complete"], true);
  EXPECT_EQ(receipt["export_path"], "/api/sessions/" + id + "/export");
  const fs::path file = receipt["file"].get<std::string>();
  ASSERT_TRUE(fs::exists(file));
  EXPECT_TRUE(validate_file(file).ok);
  auto s = read_session(file);
  EXPECT_TRUE(s.complete);
  EXPECT_EQ(golden::slurp(file), svc.export_session(id));
  auto fit = fit_mle(s, ModelKind::delusional_hedge);
  EXPECT_TRUE(std::isfinite(fit.log_likelihood));
  EXPECT_LE(fit.log_likelihood, 0.0);
  EXPECT_EQ(svc.create_session(json::object())["next"]["t"], 1);
}

TEST(Ratings, OutOfRangeSliderNamesTheField) {
  TempDir dir("range");
  auto cfg = config_in(dir.path(), 6);
  cfg.counterbalance = Counterbalance{{1, 2, 0}, "jam", "fresh", {"a", "b", "c"}};
  ExperimentService svc(cfg);
  auto d = svc.create_session(json::object());
  const auto id = id_of(d);
  participant::answer(svc, id, participant::majority);
  auto r = participant::ratings_for(d);
  r["sliders"]["accuracy"]["c"] = 101;  // avatar "c" is the Near source
  auto e = error_of([&] { svc.post_ratings(id, r); });
  EXPECT_EQ(e.status(), 400);
  EXPECT_STREQ(e.what(), "accuracy[near] out of range");

  r = participant::ratings_for(d);
  r["sliders"]["trustworthiness"].erase("a");
  r["sliders"]["knowledgeability"]["b"] = 12.5;
  r["most_majority"] = "zebra";
  e = error_of([&] { svc.post_ratings(id, r); });
  const auto issues = e.body()["issues"];
  EXPECT_EQ(issues.size(), 3u) << issues.dump();
  EXPECT_EQ(exported(svc, id).complete, false);

  r = participant::ratings_for(d, -100);
  r["sliders"]["accuracy"]["c"] = 100;
  EXPECT_NO_THROW(svc.post_ratings(id, r));
  auto s = exported(svc, id);
  EXPECT_EQ(s.ratings->sliders.at("accuracy"), (std::vector<int>{-100, -100, 100}));
  EXPECT_EQ(s.ratings->most_accurate, 1u) << "the first card shows canonical source 1";
}

// --- export -----------------------------------------------------------------------------

TEST(Export, MidSessionExportIsAnIncompletePrefix) {
  TempDir dir("mid");
  ExperimentService svc(config_in(dir.path()));
  const auto id = id_of(svc.create_session(json::object()));
  EXPECT_EQ(exported(svc, id).trials.size(), 0u);
  participant::answer(svc, id, participant::majority, 37);
  auto s = exported(svc, id);
  EXPECT_FALSE(s.complete);
  EXPECT_EQ(s.trials.size(), 37u);
  EXPECT_FALSE(s.ratings.has_value());
  auto p = dir.path() / "partial.session.jsonl";
  golden::spill(p, svc.export_session(id));
  EXPECT_TRUE(validate_file(p).ok);
}

TEST(Export, CompletedFixtureIsByteIdenticalToTheGoldenFile) {
  TempDir dir("golden");
  ExperimentService svc(config_in(dir.path(), 20240611));
  auto d = participant::complete_session(svc, {{"condition", "exp1:p=0.75"}}, participant::majority);
  const auto text = svc.export_session(id_of(d));
  const auto path = golden::dir() / "service_session.jsonl";
  if (golden::regenerating()) {
    golden::spill(path, text);
    return;
  }
  EXPECT_EQ(text, golden::slurp(path));
  EXPECT_TRUE(validate_file(path).ok);
}

TEST(Export, ExportedSessionsFeedTheFitter) {
  TempDir dir("fit");
  ExperimentService svc(config_in(dir.path(), 8));
  std::vector<SessionData> done;
  for (int i = 0; i < 5; ++i) {
    auto d = participant::complete_session(svc, json::object(), participant::follow_first);
    done.push_back(exported(svc, id_of(d)));
  }
  auto rep = fit_population(done);
  EXPECT_EQ(rep.sessions.size(), 5u);
  EXPECT_EQ(rep.conditions.size(), 5u);
  EXPECT_GE(rep.pooled.lambda, 0.0);
}

// --- counterbalance neutrality -----------------------------------------------------------

// A participant who answers from the canonical opinions; the service must
// record the same decoded behavior whatever the presentation.
TEST(Counterbalance, DecodingThenFittingIgnoresThePresentation) {
  const std::vector<Counterbalance> layouts = {
      Counterbalance::identity(3),
      {{2, 1, 0}, "jam", "fresh", {"p", "q", "r"}},
      {{1, 0, 2}, "fresh", "jam", {"m", "n", "o"}},
      {{0, 2, 1}, "jam", "fresh", {"u", "v", "w"}},
  };
  std::optional<SessionData> reference;
  std::optional<FitResult> ref_fit;
  for (const auto& cb : layouts) {
    TempDir dir("neutral");
    auto cfg = config_in(dir.path(), 31);
    cfg.counterbalance = cb;
    ExperimentService svc(cfg);
    auto policy = [&cb](const json& view) {
      // Follow the Middle source (canonical index 1) wherever it is shown.
      for (const auto& o : view["opinions"])
        if (o["avatar"] == cb.avatars[kMiddle]) return o["word"].get<std::string>();
      return std::string();
    };
    auto d = participant::complete_session(svc, {{"condition", "exp1:p=0.5"}}, policy);
    auto s = exported(svc, id_of(d));
    auto fit = fit_mle(s, ModelKind::delusional_hedge);
    if (!reference) {
      reference = s;
      ref_fit = fit;
      continue;
    }
    EXPECT_EQ(s.trials, reference->trials);
    EXPECT_EQ(fit.eta_hat, ref_fit->eta_hat);
    EXPECT_EQ(fit.alpha_hat, ref_fit->alpha_hat);
    EXPECT_EQ(fit.log_likelihood, ref_fit->log_likelihood);
  }
}

// --- crash safety ----------------------------------------------------------------------

TEST(Recovery, RestartResumesAtTheCursor) {
  TempDir dir("crash");
  std::string id;
  json d;
  std::string before;
  {
    ExperimentService svc(config_in(dir.path(), 12));
    d = svc.create_session({{"condition", "exp1:p=0.5"}});
    id = id_of(d);
    participant::answer(svc, id, participant::majority, 36);
    svc.post_prediction(id, {{"t", 37}, {"choice", d["choices"][0]}}, "retry-me");
    before = svc.export_session(id);
  }
  ExperimentService svc(config_in(dir.path(), 12));
  EXPECT_EQ(svc.export_session(id), before);
  EXPECT_EQ(svc.get_trial(id)["t"], 38);
  EXPECT_EQ(svc.assignment_counts()["exp1:p=0.5"], 1u);
  auto replay = svc.post_prediction(id, {{"t", 37}, {"choice", d["choices"][0]}}, "retry-me");
  EXPECT_EQ(replay["t"], 37) << "idempotency survives a restart";
  participant::answer(svc, id, participant::majority);
  svc.post_ratings(id, participant::ratings_for(d));
  EXPECT_TRUE(validate_file(svc.session_file(id)).ok);
}

TEST(Recovery, TornFinalLineIsDropped) {
  TempDir dir("torn");
  std::string id;
  fs::path log;
  {
    ExperimentService svc(config_in(dir.path(), 13));
    id = id_of(svc.create_session(json::object()));
    participant::answer(svc, id, participant::majority, 10);
    log = svc.log_path(id);
  }
  const auto good = golden::slurp(log);
  {
    std::ofstream out(log, std::ios::binary | std::ios::app);
    out << R"({"event":"prediction","t":11,"predic)";
  }
  ExperimentService svc(config_in(dir.path(), 13));
  EXPECT_EQ(svc.get_trial(id)["t"], 11);
  EXPECT_EQ(golden::slurp(log), good) << "log truncated back to the last complete event";
  participant::answer(svc, id, participant::majority, 1);
  EXPECT_EQ(exported(svc, id).trials.size(), 11u);
}

TEST(Recovery, CompletedSessionsStayComplete) {
  TempDir dir("done");
  std::string id;
  {
    ExperimentService svc(config_in(dir.path(), 14));
    id = id_of(participant::complete_session(svc, json::object(), participant::majority));
  }
  ExperimentService svc(config_in(dir.path(), 14));
  EXPECT_EQ(error_of([&] { svc.get_trial(id); }).code(), "session_complete");
  EXPECT_TRUE(exported(svc, id).complete);
  EXPECT_EQ(svc.health()["sessions"], 1);
}

// --- concurrency ---------------------------------------------------------------------------

TEST(Concurrency, ParallelParticipantsStayBalancedAndValid) {
  TempDir dir("threads");
  ExperimentService svc(config_in(dir.path(), 15));
  std::vector<std::string> ids(40);
  std::vector<std::thread> threads;
  for (int w = 0; w < 8; ++w)
    threads.emplace_back([&, w] {
      for (int i = w; i < 40; i += 8) ids[i] = id_of(participant::complete_session(svc, json::object(), participant::majority));
    });
  for (auto& t : threads) t.join();
  for (const auto& [tag, n] : svc.assignment_counts()) EXPECT_EQ(n, 8u) << tag;
  for (const auto& id : ids) {
    auto s = exported(svc, id);
    EXPECT_TRUE(s.complete);
    EXPECT_EQ(s.trials.size(), 100u);
  }
}
