// dhedge: simulate, fit, evaluate, export and validate hedge-learner
// artifacts, and serve live sessions of the fruit task.

#include <fnmatch.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dhedge/dhedge.hpp"
#include "dhedge/http_api.hpp"
#include "dhedge/service.hpp"

namespace fs = std::filesystem;
using namespace dhedge;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path default_out_dir() {
  if (const char* env = std::getenv("DHEDGE_OUT_DIR"); env && *env) return env;
  return "out";
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_vec(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

void write_meta(const fs::path& dir, const std::string& command) {
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  write_file(dir / "run_meta.json", [&](std::ostream& out) {
    out << json{{"command", command}, {"finished_ms", now}}.dump(2) << '\n';
  });
}

// Files named directly, plus *.jsonl files inside named directories, sorted.
std::vector<fs::path> collect_files(const std::vector<std::string>& inputs, const std::string& suffix) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) {
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().filename().string().ends_with(suffix)) files.push_back(e.path());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      std::cerr << "warning: " << in << ": no such file or directory\n";
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

// Shell-style patterns are expanded here as well so quoted globs work.
std::vector<fs::path> expand_globs(const std::vector<std::string>& patterns) {
  std::vector<fs::path> out;
  for (const auto& pat : patterns) {
    if (pat.find_first_of("*?[") == std::string::npos) {
      out.emplace_back(pat);
      continue;
    }
    fs::path p(pat);
    fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    std::vector<fs::path> matches;
    if (fs::is_directory(dir))
      for (const auto& e : fs::directory_iterator(dir))
        if (fnmatch(p.filename().c_str(), e.path().filename().c_str(), 0) == 0) matches.push_back(e.path());
    std::sort(matches.begin(), matches.end());
    out.insert(out.end(), matches.begin(), matches.end());
  }
  return out;
}

// --- simulate -----------------------------------------------------------------------

struct SimulateFlags {
  std::string config_file;
  bool exp1 = false, exp2 = false;
  double p_visible = 0.5;
  std::string condition = "m-equals-f";
  double all_agree = 0.0;
  std::vector<std::string> learners;
  double eta = 1.0, alpha = 1.0;
  std::string mode = "sampled";
  std::size_t seeds = 1;
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  std::size_t window = kDefaultWindow;
  std::string out;
  std::size_t jobs = 1;
  bool emit_sessions = false;
};

RunConfig effective_run_config(const SimulateFlags& f, const CLI::App& cmd) {
  auto set = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
  RunConfig rc;
  if (!f.config_file.empty()) {
    std::ifstream in(f.config_file);
    if (!in) throw UsageError("--config: cannot read '" + f.config_file + "'");
    try {
      rc = run_config_from_json(json::parse(in), rc);
    } catch (const std::exception& e) {
      throw UsageError("--config: " + std::string(e.what()));
    }
  } else if (!f.exp1 && !f.exp2) {
    throw UsageError("one of --exp1, --exp2 or --config is required");
  }
  if (f.exp1 && f.exp2) throw UsageError("--exp1 and --exp2 are mutually exclusive");
  if (f.exp1) {
    rc.environment = exp1_config(rc.environment.p_visible, rc.environment.seed);
    rc.schedule = ScheduleSpec::stochastic();
  }
  if (f.exp2 || (set("--condition") && !f.exp1)) {
    Exp2Condition c;
    if (f.condition == "m-equals-f")
      c = Exp2Condition::m_equals_f;
    else if (f.condition == "m-equals-n")
      c = Exp2Condition::m_equals_n;
    else
      throw UsageError("--condition must be m-equals-f or m-equals-n");
    rc.environment = exp1_config(0.0, rc.environment.seed);
    rc.schedule = exp2_schedule(c, f.all_agree);
  }
  if (set("--p-visible")) {
    if (!(f.p_visible >= 0.0 && f.p_visible <= 1.0)) throw UsageError("--p-visible must lie in [0, 1]");
    rc.environment.p_visible = f.p_visible;
  }
  if (set("--horizon")) {
    if (f.horizon < 1) throw UsageError("--horizon must be >= 1");
    rc.environment.horizon = f.horizon;
  }
  PredictionMode mode;
  try {
    mode = prediction_mode_from(f.mode);
  } catch (const std::exception&) {
    throw UsageError("--mode must be sampled or deterministic");
  }
  if (!f.learners.empty()) {
    rc.learners.clear();
    for (const auto& name : f.learners) {
      LearnerSpec l;
      try {
        l.kind = learner_kind_from(name);
      } catch (const std::exception& e) {
        throw UsageError(std::string("--learner: ") + e.what());
      }
      l.config = {f.eta, l.kind == LearnerKind::delusional_hedge ? f.alpha : 0.0, mode};
      rc.learners.push_back(l);
    }
  } else {
    for (auto& l : rc.learners) {
      if (set("--eta")) l.config.eta = f.eta;
      if (set("--alpha") && l.kind == LearnerKind::delusional_hedge) l.config.alpha = f.alpha;
      if (set("--mode")) l.config.mode = mode;
    }
  }
  for (const auto& l : rc.learners) {
    if (!(l.config.eta >= 0.0)) throw UsageError("--eta must be >= 0");
    if (!(l.config.alpha >= 0.0)) throw UsageError("--alpha must be >= 0");
  }
  if (set("--seeds")) rc.seeds = f.seeds;
  if (rc.seeds < 1) throw UsageError("--seeds must be >= 1");
  if (set("--seed")) rc.base_seed = f.seed;
  if (set("--window")) rc.window = f.window;
  if (rc.window < 1) throw UsageError("--window must be >= 1");
  if (rc.schedule.kind == ScheduleKind::scripted && rc.schedule.script.size() != rc.environment.horizon)
    throw UsageError("--config: scripted schedule length must equal the horizon");
  try {
    rc.environment.validate();
  } catch (const std::exception& e) {
    throw UsageError(std::string("--config: ") + e.what());
  }
  return rc;
}

int run_simulate(const SimulateFlags& f, const CLI::App& cmd) {
  const RunConfig rc = effective_run_config(f, cmd);
  const fs::path out = f.out.empty() ? default_out_dir() : fs::path(f.out);
  fs::create_directories(out);
  write_file(out / "run_config.json", [&](std::ostream& os) { os << to_json_value(rc).dump(2) << '\n'; });

  std::vector<LabeledFinalTrust> finals;
  std::vector<RunTrace> all;
  std::vector<std::string> names;
  for (const auto& s : rc.environment.sources) names.push_back(s.display_name);
  for (const auto& learner : rc.learners) {
    const std::string lname = to_string(learner.kind);
    auto traces = parallel_map(rc.seeds, f.jobs, [&](std::size_t i) {
      return run_episode(learner, rc.environment, rc.schedule, rc.base_seed + i);
    });
    for (const auto& tr : traces) {
      const auto r = compute_regret(tr);
      std::cout << "learner=" << lname << " seed=" << tr.seed << " final_trust=" << fmt_vec(tr.final_trust)
                << " loss=" << r.learner_loss << " best_source_loss=" << r.best_source_loss << " regret=" << r.regret
                << '\n';
    }
    write_file(out / ("traces_" + lname + ".jsonl"), [&](std::ostream& os) { write_traces(traces, os); });
    write_file(out / ("trajectory_" + lname + ".csv"),
               [&](std::ostream& os) { export_trajectory_csv(aggregate_trajectories(traces, rc.window), os); });
    auto stats = final_trust_summary(traces);
    finals.push_back({lname, names, stats});
    std::cout << "summary learner=" << lname << " runs=" << traces.size() << " mean_final_trust";
    for (std::size_t k = 0; k < stats.size(); ++k) std::cout << ' ' << names[k] << '=' << fmt(stats[k].mean);
    std::cout << '\n';
    if (f.emit_sessions) {
      fs::create_directories(out / "sessions");
      for (const auto& tr : traces) {
        SessionData s;
        s.session_id = lname + "-" + std::to_string(tr.seed);
        s.condition = tr.schedule.kind == ScheduleKind::exp2_m_equals_f   ? "exp2:m-equals-f"
                      : tr.schedule.kind == ScheduleKind::exp2_m_equals_n ? "exp2:m-equals-n"
                                                                          : Condition::exp1(tr.environment.p_visible).tag();
        s.counterbalance = Counterbalance::identity(tr.environment.sources.size());
        s.environment = tr.environment;
        s.schedule = tr.schedule;
        s.provenance = {{"generator", to_json_value(tr.learner)}, {"seed", tr.seed}};
        for (const auto& st : tr.steps) s.trials.push_back(st.trial);
        s.complete = true;
        write_session(s, out / "sessions" / (s.session_id + ".session.jsonl"));
      }
    }
    all.insert(all.end(), std::make_move_iterator(traces.begin()), std::make_move_iterator(traces.end()));
  }
  write_file(out / "final_trust.csv", [&](std::ostream& os) { export_final_trust_csv(finals, os); });
  write_file(out / "regret.csv", [&](std::ostream& os) { export_regret_csv(all, os); });
  write_meta(out, "simulate");
  return kOk;
}

// --- fit -------------------------------------------------------------------------------

struct FitFlags {
  std::vector<std::string> sessions;
  std::string out;
  SearchConfig search;
  std::size_t jobs = 1;
};

int run_fit(const FitFlags& f) {
  try {
    f.search.validate();
  } catch (const std::exception& e) {
    throw UsageError(std::string("grid flags: ") + e.what());
  }
  auto files = collect_files(f.sessions, ".jsonl");
  if (files.empty()) {
    std::cerr << "fit: no sessions found\n";
    return kUsage;
  }
  std::vector<SessionData> sessions;
  bool failed = false;
  for (const auto& p : files) {
    try {
      sessions.push_back(read_session(p));
    } catch (const std::exception& e) {
      std::cerr << "fit: " << p.string() << ": " << e.what() << '\n';
      failed = true;
    }
  }
  if (sessions.empty()) {
    std::cerr << "fit: no readable sessions\n";
    return kFailure;
  }
  const auto rep = fit_population(sessions, f.search, f.jobs);
  const fs::path out = f.out.empty() ? default_out_dir() : fs::path(f.out);
  fs::create_directories(out);
  write_file(out / "fit_report.json", [&](std::ostream& os) { os << fit_report_json(rep, f.search).dump(2) << '\n'; });
  write_file(out / "fit_summary.csv", [&](std::ostream& os) { export_fit_csv(rep, os); });
  for (const auto& s : rep.sessions)
    std::cout << "session=" << s.session_id << " condition=" << s.condition << " standard: eta=" << fmt(s.standard.eta_hat)
              << " ll=" << fmt(s.standard.log_likelihood) << "  delusional: eta=" << fmt(s.delusional.eta_hat)
              << " alpha=" << fmt(s.delusional.alpha_hat) << " ll=" << fmt(s.delusional.log_likelihood) << '\n';
  for (const auto& c : rep.conditions)
    std::cout << "condition=" << c.condition << " lambda(" << c.lrt.df << ")=" << fmt(c.lrt.lambda, 3)
              << " p=" << c.lrt.p_value << " p_bonferroni=" << c.p_adjusted << '\n';
  std::cout << "pooled lambda(" << rep.pooled.df << ")=" << fmt(rep.pooled.lambda, 3) << " p=" << rep.pooled.p_value << '\n';
  write_meta(out, "fit");
  return failed ? kFailure : kOk;
}

// --- eval ------------------------------------------------------------------------------

int run_eval(const std::vector<std::string>& inputs, const std::string& out_flag, std::size_t window) {
  auto files = collect_files(inputs, ".jsonl");
  if (files.empty()) {
    std::cerr << "eval: no trace files found\n";
    return kUsage;
  }
  if (window < 1) throw UsageError("--window must be >= 1");
  std::map<std::string, std::vector<RunTrace>> by_learner;
  for (const auto& p : files) {
    std::ifstream in(p);
    if (!in) {
      std::cerr << "eval: " << p.string() << ": cannot open\n";
      return kFailure;
    }
    try {
      for (auto& tr : read_traces(in)) by_learner[to_string(tr.learner.kind)].push_back(std::move(tr));
    } catch (const std::exception& e) {
      std::cerr << "eval: " << p.string() << ": " << e.what() << '\n';
      return kFailure;
    }
  }
  if (by_learner.empty()) {
    std::cerr << "eval: input contains no runs\n";
    return kFailure;
  }
  const fs::path out = out_flag.empty() ? default_out_dir() : fs::path(out_flag);
  fs::create_directories(out);
  std::vector<LabeledFinalTrust> finals;
  std::vector<RunTrace> all;
  for (auto& [name, traces] : by_learner) {
    std::vector<std::string> names;
    for (const auto& s : traces.front().environment.sources) names.push_back(s.display_name);
    auto stats = final_trust_summary(traces);
    finals.push_back({name, names, stats});
    write_file(out / ("trajectory_" + name + ".csv"),
               [&](std::ostream& os) { export_trajectory_csv(aggregate_trajectories(traces, window), os); });
    double regret = 0.0;
    for (const auto& tr : traces) regret += compute_regret(tr).regret;
    std::cout << "learner=" << name << " runs=" << traces.size() << " mean_regret=" << fmt(regret / traces.size());
    for (std::size_t k = 0; k < stats.size(); ++k) std::cout << ' ' << names[k] << '=' << fmt(stats[k].mean);
    std::cout << '\n';
    all.insert(all.end(), traces.begin(), traces.end());
  }
  write_file(out / "final_trust.csv", [&](std::ostream& os) { export_final_trust_csv(finals, os); });
  write_file(out / "regret.csv", [&](std::ostream& os) { export_regret_csv(all, os); });
  write_meta(out, "eval");
  return kOk;
}

// --- export ------------------------------------------------------------------------------

int run_export(const std::vector<std::string>& inputs, const std::string& out_flag) {
  auto files = collect_files(inputs, ".jsonl");
  if (files.empty()) {
    std::cerr << "export: no sessions found\n";
    return kUsage;
  }
  std::vector<SessionData> sessions;
  bool failed = false;
  for (const auto& p : files) {
    try {
      sessions.push_back(read_session(p));
    } catch (const std::exception& e) {
      std::cerr << "export: " << p.string() << ": " << e.what() << '\n';
      failed = true;
    }
  }
  const fs::path out = out_flag.empty() ? default_out_dir() : fs::path(out_flag);
  fs::create_directories(out);
  write_file(out / "trials.csv", [&](std::ostream& os) { export_session_trials_csv(sessions, os); });
  write_file(out / "ratings.csv", [&](std::ostream& os) { export_ratings_csv(sessions, os); });
  std::cout << "exported " << sessions.size() << " session(s) to " << out.string() << '\n';
  return failed ? kFailure : kOk;
}

// --- validate ------------------------------------------------------------------------------

int run_validate(const std::vector<std::string>& patterns) {
  auto files = expand_globs(patterns);
  if (files.empty()) {
    std::cerr << "validate: warning: no files matched\n";
    return kOk;
  }
  bool bad = false;
  for (const auto& p : files) {
    auto v = validate_file(p);
    std::cout << (v.ok ? "VALID   " : "INVALID ") << p.string() << (v.kind.empty() ? "" : " (" + v.kind + ")") << '\n';
    for (const auto& i : v.issues) std::cout << "  error: " << i << '\n';
    for (const auto& w : v.warnings) std::cout << "  warning: " << w << '\n';
    bad |= !v.ok;
  }
  return bad ? kFailure : kOk;
}

// --- serve ------------------------------------------------------------------------------------

int run_serve(const std::string& host, int port, const std::string& data_dir, const std::string& experiment,
              const std::string& static_dir, std::optional<std::uint64_t> seed) {
  if (experiment != "exp1" && experiment != "exp2") throw UsageError("--experiment must be exp1 or exp2");
  ServiceConfig cfg;
  cfg.data_dir = data_dir;
  cfg.experiment = experiment;
  cfg.seed = seed;
  ExperimentService service(cfg);
  httplib::Server server;
  mount_api(server, service, static_dir);
  std::cout << "serving " << experiment << " on http://" << host << ':' << port << " (data: " << data_dir << ")"
            << std::endl;
  if (!server.listen(host, port)) {
    std::cerr << "serve: cannot listen on " << host << ':' << port << '\n';
    return kFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hedge, delusional hedge and accuracy-majority learners: simulation, fitting and live sessions"};
  app.require_subcommand(1);

  SimulateFlags sim;
  auto* simulate = app.add_subcommand("simulate", "Run learners on Experiment 1/2 environments over many seeds");
  simulate->add_option("--config", sim.config_file, "Run config JSON (flags override it)");
  simulate->add_flag("--exp1", sim.exp1, "Experiment 1 environment (stochastic label visibility)");
  simulate->add_flag("--exp2", sim.exp2, "Experiment 2 environment (5 labeled, then unlabeled trials)");
  simulate->add_option("--p-visible", sim.p_visible, "Probability that a trial is labeled (Experiment 1)");
  simulate->add_option("--condition", sim.condition, "Experiment 2 condition: m-equals-f or m-equals-n");
  simulate->add_option("--all-agree-fraction", sim.all_agree, "Experiment 2: share of unanimous unlabeled trials");
  simulate->add_option("--learner", sim.learners, "standard, delusional or heuristic (repeatable)");
  simulate->add_option("--eta", sim.eta, "Learning rate");
  simulate->add_option("--alpha", sim.alpha, "Delusional-loss weight");
  simulate->add_option("--mode", sim.mode, "Prediction mode: sampled or deterministic");
  simulate->add_option("--seeds", sim.seeds, "Number of seeds");
  simulate->add_option("--seed", sim.seed, "First seed");
  simulate->add_option("--horizon", sim.horizon, "Trials per run");
  simulate->add_option("--window", sim.window, "Moving-average window for trajectories");
  simulate->add_option("--out", sim.out, "Output directory (default $DHEDGE_OUT_DIR or ./out)");
  simulate->add_option("--jobs", sim.jobs, "Worker threads (0 = all cores)");
  simulate->add_flag("--emit-sessions", sim.emit_sessions, "Also write each run as a session file");

  FitFlags fitf;
  auto* fit = app.add_subcommand("fit", "Maximum-likelihood fits and likelihood-ratio tests for session files");
  fit->add_option("--sessions,sessions", fitf.sessions, "Session files or directories")->required();
  fit->add_option("--out", fitf.out, "Output directory (default $DHEDGE_OUT_DIR or ./out)");
  fit->add_option("--eta-min", fitf.search.eta_min, "Smallest positive eta on the grid");
  fit->add_option("--eta-max", fitf.search.eta_max, "Largest eta");
  fit->add_option("--eta-points", fitf.search.eta_points, "Log-spaced eta grid points");
  fit->add_option("--alpha-min", fitf.search.alpha_min, "Smallest positive alpha on the grid");
  fit->add_option("--alpha-max", fitf.search.alpha_max, "Largest alpha");
  fit->add_option("--alpha-points", fitf.search.alpha_points, "Log-spaced alpha grid points");
  fit->add_option("--tolerance", fitf.search.relative_tolerance, "Refinement stop: relative log-likelihood gain");
  fit->add_option("--jobs", fitf.jobs, "Worker threads (0 = all cores)");

  std::vector<std::string> eval_inputs;
  std::string eval_out;
  std::size_t eval_window = kDefaultWindow;
  auto* eval = app.add_subcommand("eval", "Regret, final trust and trajectory series from trace files");
  eval->add_option("--traces,traces", eval_inputs, "Trace files or directories")->required();
  eval->add_option("--out", eval_out, "Output directory (default $DHEDGE_OUT_DIR or ./out)");
  eval->add_option("--window", eval_window, "Moving-average window");

  std::vector<std::string> export_inputs;
  std::string export_out;
  auto* exp = app.add_subcommand("export", "Tidy CSV tables (trials, ratings) from session files");
  exp->add_option("--sessions,sessions", export_inputs, "Session files or directories")->required();
  exp->add_option("--out", export_out, "Output directory (default $DHEDGE_OUT_DIR or ./out)");

  std::vector<std::string> validate_inputs;
  auto* validate = app.add_subcommand("validate", "Schema-validate artifact files");
  validate->add_option("files", validate_inputs, "Files or glob patterns")->required();

  std::string host = "127.0.0.1", data_dir = "sessions", experiment = "exp1", static_dir;
  int port = 8080;
  std::optional<std::uint64_t> serve_seed;
  auto* serve = app.add_subcommand("serve", "Run the live experiment service");
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "Listen port");
  serve->add_option("--data-dir", data_dir, "Directory for session logs");
  serve->add_option("--experiment", experiment, "Condition pool for auto-assignment: exp1 or exp2");
  serve->add_option("--static", static_dir, "Directory served at / (browser client bundle)");
  serve->add_option("--seed", serve_seed, "Fix ids, seeds and counterbalancing (testing only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << '\n' << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kUsage;
  }

  try {
    if (*simulate) return run_simulate(sim, *simulate);
    if (*fit) return run_fit(fitf);
    if (*eval) return run_eval(eval_inputs, eval_out, eval_window);
    if (*exp) return run_export(export_inputs, export_out);
    if (*validate) return run_validate(validate_inputs);
    if (*serve) return run_serve(host, port, data_dir, experiment, static_dir, serve_seed);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
