#include "rsmtune/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rsmtune/campaign.hpp"
#include "rsmtune/error.hpp"
#include "rsmtune/report.hpp"
#include "rsmtune/store.hpp"

namespace rsmtune {

namespace fs = std::filesystem;

namespace {

// Bad invocation detected after CLI11 accepted the syntax.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

std::size_t parse_jobs(const std::string& text, const std::string& source) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || v < 1)
    throw UsageError(fmt::format("{}: '{}' is not a positive integer", source, text));
  return v;
}

std::map<std::string, double> parse_half_widths(const std::vector<std::string>& items) {
  std::map<std::string, double> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError(fmt::format("--half-width: expected name=value, got '{}'", item));
    const std::string value = item.substr(eq + 1);
    double d = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), d);
    if (ec != std::errc() || ptr != value.data() + value.size())
      throw UsageError(fmt::format("--half-width: '{}' is not a number", value));
    out[item.substr(0, eq)] = d;
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

struct Options {
  std::string dir = ".";
  // init
  std::string config;
  std::string init_dir;
  // run
  std::optional<std::string> jobs;
  bool autopilot = false;
  // import / design / d-compare
  std::string csv;
  std::string out_file;
  std::string design_a, design_b;
  std::string order = "second";
  // fit
  std::string fit_phase;
  // drop
  std::optional<double> p_threshold;
  std::vector<std::string> names;
  // descend
  std::optional<std::size_t> steps;
  std::vector<double> t_values;
  // ccd
  std::vector<std::string> half_widths;
  std::optional<std::uint64_t> best_run;
  // confirm
  std::optional<std::size_t> replicates;
  std::string target = "stationary";
};

class Session {
 public:
  Session(const Options& opt, std::ostringstream& out, std::ostringstream& err)
      : opt_(opt), out_(out), err_(err) {}

  int init() {
    std::string config = opt_.config;
    if (config.empty()) config = env("RSMTUNE_CONFIG").value_or("");
    if (config.empty()) throw UsageError("init: a config path is required (or RSMTUNE_CONFIG)");
    const fs::path dir = opt_.init_dir.empty() ? fs::path(opt_.dir) : fs::path(opt_.init_dir);
    const CampaignConfig cfg = load_config(config);
    if (fs::exists(dir / "campaign.json"))
      throw Error(fmt::format("'{}' already holds a campaign", dir.string()));
    const CampaignState state = rsmtune::init(cfg);
    fs::create_directories(dir);
    DirectoryLock lock(dir);
    save_campaign(dir, state);
    out_ << fmt::format("initialised campaign in {}: {} screening runs pending\n", dir.string(),
                        state.pending.size());
    return 0;
  }

  int status() {
    const auto s = load();
    out_ << render_status(s);
    return 0;
  }

  int run() {
    auto s = load();
    if (!s.config.objective)
      throw Error("run: the config has no objective; use design/import for offline evaluation");
    std::size_t jobs = s.config.jobs;
    if (opt_.jobs)
      jobs = parse_jobs(*opt_.jobs, "--jobs");
    else if (const auto e = env("RSMTUNE_JOBS"))
      jobs = parse_jobs(*e, "RSMTUNE_JOBS");
    const auto objective = make_objective(*s.config.objective, s.config.factors);

    std::size_t evaluated = 0;
    for (;;) {
      if (opt_.autopilot && s.pending.empty()) {
        const Phase before = s.phase;
        s = autopilot_advance(std::move(s));
        save(s);
        if (s.phase != before) out_ << fmt::format("advanced to phase {}\n", to_string(s.phase));
      }
      if (s.pending.empty()) break;
      std::vector<EvaluationFailure> failures;
      const auto done = evaluate_pending(s, *objective, jobs, &failures);
      s = step(std::move(s), done);
      save(s);
      evaluated += done.size();
      if (!failures.empty()) {
        for (const auto& f : failures) {
          err_ << fmt::format("error: {}\n", f.message);
          if (!f.diagnostics.empty()) err_ << f.diagnostics << (f.diagnostics.back() == '\n' ? "" : "\n");
        }
        err_ << fmt::format("{} runs recorded, {} failed; the campaign is paused\n", done.size(),
                            failures.size());
        return 1;
      }
      if (!opt_.autopilot) break;
    }
    out_ << fmt::format("evaluated {} runs; phase {}\n", evaluated, to_string(s.phase));
    if (s.phase == Phase::done && opt_.autopilot) out_ << render_report(s);
    return 0;
  }

  int import() {
    auto s = load();
    const auto rows = parse_import_csv(read_file(opt_.csv), s.factor_names());
    const auto done = completions_from_import(s, rows);
    const std::size_t before = s.ledger.size();
    s = step(std::move(s), done);
    save(s);
    out_ << fmt::format("imported {} runs; {} still pending\n", s.ledger.size() - before,
                        s.pending.size());
    return 0;
  }

  int design() {
    const auto s = load();
    const std::string csv = design_csv(s);
    if (opt_.out_file.empty()) {
      out_ << csv;
    } else {
      write_atomic(opt_.out_file, csv);
      out_ << fmt::format("wrote {} pending runs to {}\n", s.pending.size(), opt_.out_file);
    }
    return 0;
  }

  int fit() {
    const auto s = load();
    std::string phase = opt_.fit_phase;
    if (phase.empty()) phase = s.ccd_fit ? "ccd" : "screening";
    if (phase == "screening") {
      if (!s.screening_fit) throw Error("fit: screening responses are incomplete");
      out_ << "First-order regression (screening)\n" << render_fit(*s.screening_fit);
      out_ << fmt::format("residual dof: {}\n", s.screening_fit->dof);
    } else {
      if (!s.ccd_fit)
        throw Error(fmt::format("fit: no second-order fit{}",
                                s.ccd_fit_error ? ": " + *s.ccd_fit_error : std::string()));
      out_ << "Second-order regression (CCD)\n" << render_fit(*s.ccd_fit);
      out_ << fmt::format("residual dof: {}\n", s.ccd_fit->dof);
    }
    return 0;
  }

  int drop() {
    auto s = load();
    if (opt_.p_threshold && !opt_.names.empty())
      throw UsageError("drop: give either --p-threshold or factor names, not both");
    const auto before = s.active_names();
    DropRule rule = PThreshold{opt_.p_threshold.value_or(s.config.phases.p_threshold)};
    if (!opt_.names.empty()) rule = opt_.names;
    s = drop_factors(std::move(s), rule);
    const auto after = s.active_names();
    std::vector<std::string> dropped;
    for (const auto& n : before)
      if (std::find(after.begin(), after.end(), n) == after.end()) dropped.push_back(n);
    save(s);
    out_ << fmt::format("dropped: {}\n", dropped.empty() ? "none" : join(dropped));
    out_ << fmt::format("active: {}\n", join(after));
    return 0;
  }

  int descend() {
    auto s = load();
    if (opt_.steps && !opt_.t_values.empty())
      throw UsageError("descend: give either --steps or --t, not both");
    std::vector<double> schedule = opt_.t_values;
    if (schedule.empty()) schedule = default_descent_schedule(opt_.steps.value_or(s.config.phases.n_t));
    s = begin_descent(std::move(s), schedule);
    save(s);
    out_ << render_descent(s);
    return 0;
  }

  int ccd() {
    auto s = load();
    const auto widths = parse_half_widths(opt_.half_widths);
    s = recenter_and_ccd(std::move(s), widths, opt_.best_run);
    save(s);
    out_ << fmt::format("CCD over {} active factors: {} runs pending\n", s.active_names().size(),
                        s.pending.size());
    print_ranges(s);
    return 0;
  }

  int analyze() {
    const auto s = load();
    if (!s.ccd_fit)
      throw Error(fmt::format("analyze: no second-order fit{}",
                              s.ccd_fit_error ? ": " + *s.ccd_fit_error : std::string()));
    out_ << render_canonical(s);
    return 0;
  }

  int confirm() {
    auto s = load();
    ConfirmTarget target = ConfirmTarget::stationary;
    if (opt_.target == "historic-best") {
      target = ConfirmTarget::historic_best;
    } else if (opt_.target != "stationary") {
      throw UsageError(fmt::format("--target: '{}' is not stationary or historic-best", opt_.target));
    }
    s = analyze_and_confirm(std::move(s), opt_.replicates.value_or(s.config.phases.replicates),
                            target);
    save(s);
    out_ << fmt::format("{} confirmation runs pending; phase {}\n", s.pending.size(),
                        to_string(s.phase));
    if (s.confirmation) out_ << render_confirmation(*s.confirmation);
    return 0;
  }

  int report() {
    const auto s = load();
    out_ << render_report(s);
    return 0;
  }

  int d_compare() {
    ModelOrder order = ModelOrder::second;
    if (opt_.order == "first") {
      order = ModelOrder::first;
    } else if (opt_.order != "second") {
      throw UsageError(fmt::format("--order: '{}' is not first or second", opt_.order));
    }
    const Design a = parse_coded_design(read_file(opt_.design_a));
    const Design b = parse_coded_design(read_file(opt_.design_b));
    const double da = d_criterion(a, order);
    const double db = d_criterion(b, order);
    out_ << fmt::format("D({}) = {:.6e}  [{} runs]\n", opt_.design_a, da, a.size());
    out_ << fmt::format("D({}) = {:.6e}  [{} runs]\n", opt_.design_b, db, b.size());
    if (da == db) {
      out_ << "designs are equally D-efficient\n";
    } else {
      out_ << fmt::format("smaller determinant: {}\n", da < db ? opt_.design_a : opt_.design_b);
    }
    return 0;
  }

  int verify() {
    const auto s = load();
    const auto rebuilt = replay(s.config, s.events, s.ledger);
    if (to_json(rebuilt).dump() != to_json(s).dump())
      throw Error("verify: replaying the ledger does not reproduce campaign.json");
    out_ << fmt::format("ok: {} events and {} runs replay to an identical state\n",
                        s.events.size(), s.ledger.size());
    return 0;
  }

 private:
  CampaignState load() {
    if (!fs::exists(fs::path(opt_.dir) / "campaign.json"))
      throw Error(fmt::format("'{}' is not a campaign directory (no campaign.json)", opt_.dir));
    lock_.emplace(opt_.dir);
    return load_campaign(opt_.dir);
  }

  void save(const CampaignState& s) { save_campaign(opt_.dir, s); }

  void print_ranges(const CampaignState& s) {
    for (const auto& f : s.factors) {
      if (!f.active) continue;
      out_ << fmt::format("  {}: [{}, {}]\n", f.global.name, f.current.low, f.current.high);
    }
  }

  const Options& opt_;
  std::ostringstream& out_;
  std::ostringstream& err_;
  std::optional<DirectoryLock> lock_;
};

}  // namespace

CommandOutcome dispatch(const std::vector<std::string>& args) {
  CommandOutcome outcome;
  std::ostringstream out;
  std::ostringstream err;
  Options opt;

  CLI::App app{"Response surface hyperparameter tuning", "rsmtune"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("-C,--dir", opt.dir, "Campaign directory")->capture_default_str();

  auto* init = app.add_subcommand("init", "Create a campaign from a config file");
  init->add_option("config", opt.config, "Config file (default: $RSMTUNE_CONFIG)");
  init->add_option("directory", opt.init_dir, "Campaign directory (default: --dir)");

  app.add_subcommand("status", "Show phase, factors and pending runs");

  auto* run = app.add_subcommand("run", "Evaluate pending runs with the configured objective");
  run->add_option("-j,--jobs", opt.jobs, "Concurrent evaluations (default: $RSMTUNE_JOBS or config)");
  run->add_flag("--autopilot", opt.autopilot, "Advance through every phase with the defaults");

  auto* import = app.add_subcommand("import", "Record externally computed losses");
  import->add_option("csv", opt.csv, "CSV in the design layout with the loss column filled")
      ->required();

  auto* design = app.add_subcommand("design", "Export pending runs for offline evaluation");
  design->add_option("-o,--out", opt.out_file, "Write to this file instead of stdout");

  auto* fit = app.add_subcommand("fit", "Show the latest regression fit");
  fit->add_option("--phase", opt.fit_phase, "screening or ccd")
      ->check(CLI::IsMember({"screening", "ccd"}));

  auto* drop = app.add_subcommand("drop", "Hold insignificant factors at their mid level");
  drop->add_option("--p-threshold", opt.p_threshold, "Drop factors with p-value above this");
  drop->add_option("names", opt.names, "Factors to drop");

  auto* descend = app.add_subcommand("descend", "Queue runs along the path of steepest descent");
  descend->add_option("--steps", opt.steps, "Steps t = -1..-N (default: phases.n_t)");
  descend->add_option("--t", opt.t_values, "Explicit negative step lengths");

  auto* ccd = app.add_subcommand("ccd", "Re-centre on the best descent run and queue a CCD");
  ccd->add_option("--half-width", opt.half_widths, "name=value, repeatable");
  ccd->add_option("--best-run", opt.best_run, "Centre on this descent run instead");

  app.add_subcommand("analyze", "Canonical analysis of the second-order fit");

  auto* confirm = app.add_subcommand("confirm", "Queue confirmation runs");
  confirm->add_option("-r,--replicates", opt.replicates, "Confirmation runs (default: config)");
  confirm->add_option("--target", opt.target, "stationary or historic-best")
      ->capture_default_str();

  app.add_subcommand("report", "Budget, best so far and confirmation comparison");

  auto* dcmp = app.add_subcommand("d-compare", "Compare the D-criterion of two design CSVs");
  dcmp->add_option("design_a", opt.design_a)->required();
  dcmp->add_option("design_b", opt.design_b)->required();
  dcmp->add_option("--order", opt.order, "first or second")->capture_default_str();

  app.add_subcommand("verify", "Check that the ledger replays to the stored state");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    outcome.exit_code = app.exit(e, out, err) == 0 ? 0 : 2;
    outcome.out = out.str();
    outcome.err = err.str();
    return outcome;
  }

  Session session(opt, out, err);
  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "init") outcome.exit_code = session.init();
    else if (name == "status") outcome.exit_code = session.status();
    else if (name == "run") outcome.exit_code = session.run();
    else if (name == "import") outcome.exit_code = session.import();
    else if (name == "design") outcome.exit_code = session.design();
    else if (name == "fit") outcome.exit_code = session.fit();
    else if (name == "drop") outcome.exit_code = session.drop();
    else if (name == "descend") outcome.exit_code = session.descend();
    else if (name == "ccd") outcome.exit_code = session.ccd();
    else if (name == "analyze") outcome.exit_code = session.analyze();
    else if (name == "confirm") outcome.exit_code = session.confirm();
    else if (name == "report") outcome.exit_code = session.report();
    else if (name == "d-compare") outcome.exit_code = session.d_compare();
    else if (name == "verify") outcome.exit_code = session.verify();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    outcome.exit_code = 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    outcome.exit_code = 1;
  }
  outcome.out = out.str();
  outcome.err = err.str();
  return outcome;
}

}  // namespace rsmtune
