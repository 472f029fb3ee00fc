#include "rsmtune/campaign.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "rsmtune/error.hpp"

namespace rsmtune {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// names and small helpers

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::screening: return "screening";
    case Phase::descent: return "descent";
    case Phase::ccd: return "ccd";
    case Phase::confirmation: return "confirmation";
    case Phase::done: return "done";
  }
  return "?";
}

Phase parse_phase(std::string_view text) {
  for (auto p : {Phase::screening, Phase::descent, Phase::ccd, Phase::confirmation, Phase::done})
    if (to_string(p) == text) return p;
  throw Error(fmt::format("unknown phase '{}'", text));
}

namespace {

std::string_view to_string(ConfirmTarget target) {
  return target == ConfirmTarget::stationary ? "stationary" : "historic-best";
}

ConfirmTarget parse_confirm_target(std::string_view text) {
  if (text == "stationary") return ConfirmTarget::stationary;
  if (text == "historic-best") return ConfirmTarget::historic_best;
  throw Error(fmt::format("unknown confirmation target '{}'", text));
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::uint64_t ipow(std::uint64_t base, std::size_t exp) {
  std::uint64_t r = 1;
  for (std::size_t i = 0; i < exp; ++i) {
    if (r > UINT64_MAX / base) return UINT64_MAX;
    r *= base;
  }
  return r;
}

// Numbers that may be non-finite (t values of an exact fit) go out as strings;
// the analysis section is informational and never read back.
ordered_json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

// ---------------------------------------------------------------------------
// config parsing

struct Reader {
  const json& j;
  std::string path;

  [[noreturn]] void fail(const std::string& field, const std::string& why) const {
    throw Error(fmt::format("{}{}: {}", path.empty() ? "" : path + ".", field, why));
  }

  void only(std::initializer_list<std::string_view> keys) const {
    if (!j.is_object()) throw Error(fmt::format("{}: expected an object", path.empty() ? "config" : path));
    for (const auto& [k, v] : j.items())
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(k, "unknown field");
  }

  bool has(const std::string& key) const { return j.contains(key) && !j.at(key).is_null(); }

  double number(const std::string& key) const {
    if (!has(key)) fail(key, "required");
    const auto& v = j.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }

  double number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  std::uint64_t count_or(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0))
      fail(key, "must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  std::string text(const std::string& key) const {
    if (!has(key)) fail(key, "required");
    if (!j.at(key).is_string()) fail(key, "must be a string");
    return j.at(key).get<std::string>();
  }

  Reader sub(const std::string& key) const {
    return Reader{j.at(key), path.empty() ? key : path + "." + key};
  }
};

FactorSpec parse_factor(const json& j, const std::string& path) {
  Reader r{j, path};
  r.only({"name", "kind", "low", "high", "mid", "modulus", "policy", "limits"});
  FactorSpec f;
  f.name = r.text("name");
  const std::string label = fmt::format("{} ({})", path, f.name);
  Reader named{j, label};
  try {
    f.kind = r.has("kind") ? parse_factor_kind(r.text("kind")) : FactorKind::continuous;
  } catch (const Error& e) {
    named.fail("kind", e.what());
  }
  f.low = named.number("low");
  f.high = named.number("high");
  if (r.has("mid")) f.mid = named.number("mid");
  if (r.has("modulus")) {
    const auto q = named.count_or("modulus", 0);
    f.modulus = static_cast<int>(q);
  }
  f.oob = f.kind == FactorKind::cyclic ? OutOfBounds::wrap : OutOfBounds::none;
  if (r.has("policy")) {
    try {
      f.oob = parse_out_of_bounds(r.text("policy"));
    } catch (const Error& e) {
      named.fail("policy", e.what());
    }
  }
  if (r.has("limits")) {
    const auto& lim = j.at("limits");
    if (!lim.is_array() || lim.size() != 2 || !lim[0].is_number() || !lim[1].is_number())
      named.fail("limits", "must be [low, high]");
    f.limit_low = lim[0].get<double>();
    f.limit_high = lim[1].get<double>();
  }
  try {
    validate(f);
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path, e.what()));
  }
  return f;
}

Eigen::MatrixXd parse_matrix(const Reader& r, const std::string& key, std::size_t p) {
  if (!r.has(key)) r.fail(key, "required");
  const auto& m = r.j.at(key);
  if (!m.is_array() || m.size() != p) r.fail(key, fmt::format("must be a {0}x{0} array", p));
  Eigen::MatrixXd out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) {
    if (!m[i].is_array() || m[i].size() != p)
      r.fail(key, fmt::format("row {} must have {} entries", i, p));
    for (std::size_t k = 0; k < p; ++k) {
      if (!m[i][k].is_number()) r.fail(key, "entries must be numbers");
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = m[i][k].get<double>();
    }
  }
  return out;
}

ObjectiveSpec parse_objective(const Reader& r, std::size_t p, std::uint64_t seed) {
  const std::string kind = r.text("kind");
  if (kind == "builtin_quadratic") {
    r.only({"kind", "B", "b", "c", "noise_sigma", "seed"});
    QuadraticSurface q;
    q.b_matrix = parse_matrix(r, "B", p);
    if (!q.b_matrix.isApprox(q.b_matrix.transpose(), 1e-12)) r.fail("B", "must be symmetric");
    if (!r.has("b") || !r.j.at("b").is_array() || r.j.at("b").size() != p)
      r.fail("b", fmt::format("must be an array of {} numbers", p));
    q.b.resize(static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < p; ++i) {
      if (!r.j.at("b")[i].is_number()) r.fail("b", "entries must be numbers");
      q.b(static_cast<Eigen::Index>(i)) = r.j.at("b")[i].get<double>();
    }
    q.c = r.number_or("c", 0.0);
    q.noise_sigma = r.number_or("noise_sigma", 0.0);
    if (q.noise_sigma < 0.0) r.fail("noise_sigma", "must be >= 0");
    q.seed = r.count_or("seed", seed);
    return q;
  }
  if (kind == "external") {
    r.only({"kind", "command", "timeout_seconds"});
    ExternalCommand c;
    if (!r.has("command") || !r.j.at("command").is_array() || r.j.at("command").empty())
      r.fail("command", "must be a non-empty array of strings");
    for (const auto& a : r.j.at("command")) {
      if (!a.is_string()) r.fail("command", "must be a non-empty array of strings");
      c.argv.push_back(a.get<std::string>());
    }
    c.timeout_seconds = r.number_or("timeout_seconds", 3600.0);
    if (!(c.timeout_seconds > 0.0)) r.fail("timeout_seconds", "must be positive");
    return c;
  }
  r.fail("kind", fmt::format("unknown objective kind '{}' (builtin_quadratic | external)", kind));
}

void check_config(const CampaignConfig& c) {
  if (c.factors.empty()) throw Error("factors: at least one factor is required");
  std::set<std::string> seen;
  for (std::size_t i = 0; i < c.factors.size(); ++i) {
    if (!seen.insert(c.factors[i].name).second)
      throw Error(fmt::format("factors[{}].name: duplicate factor name '{}'", i, c.factors[i].name));
    try {
      validate(c.factors[i]);
    } catch (const Error& e) {
      throw Error(fmt::format("factors[{}]: {}", i, e.what()));
    }
  }
  if (c.factors.size() > 30) throw Error("factors: at most 30 factors are supported");
  const auto& ph = c.phases;
  if (ph.n_c < 1) throw Error("phases.n_c: must be at least 1");
  if (ph.n_c_ccd < 1) throw Error("phases.n_c_ccd: must be at least 1");
  if (ph.n_s < 1) throw Error("phases.n_s: must be at least 1");
  if (!(ph.p_threshold >= 0.0 && ph.p_threshold <= 1.0))
    throw Error("phases.p_threshold: must lie in [0, 1]");
  if (ph.alpha && !(*ph.alpha > 0.0)) throw Error("phases.alpha: must be positive");
  for (const auto& [name, d] : ph.half_widths) {
    if (!seen.count(name)) throw Error(fmt::format("phases.half_widths.{}: unknown factor", name));
    if (!(d > 0.0)) throw Error(fmt::format("phases.half_widths.{}: must be positive", name));
  }
  if (c.jobs < 1) throw Error("jobs: must be at least 1");
  if (c.objective) make_objective(*c.objective, c.factors);
}

}  // namespace

CampaignConfig parse_config(const json& j) {
  Reader r{j, ""};
  r.only({"factors", "objective", "phases", "seed", "jobs"});
  CampaignConfig c;
  c.seed = r.count_or("seed", 0);
  c.jobs = r.count_or("jobs", 1);
  if (!r.has("factors") || !j.at("factors").is_array())
    throw Error("factors: required array of factor declarations");
  for (std::size_t i = 0; i < j.at("factors").size(); ++i)
    c.factors.push_back(parse_factor(j.at("factors")[i], fmt::format("factors[{}]", i)));
  if (r.has("phases")) {
    const Reader ph = r.sub("phases");
    ph.only({"n_c", "n_0_1", "n_t", "n_c_ccd", "n_s", "n_0_2", "alpha", "p_threshold",
             "half_widths", "replicates"});
    auto& p = c.phases;
    p.n_c = ph.count_or("n_c", p.n_c);
    p.n_0_1 = ph.count_or("n_0_1", p.n_0_1);
    p.n_t = ph.count_or("n_t", p.n_t);
    p.n_c_ccd = ph.count_or("n_c_ccd", p.n_c_ccd);
    p.n_s = ph.count_or("n_s", p.n_s);
    p.n_0_2 = ph.count_or("n_0_2", p.n_0_2);
    if (ph.has("alpha")) p.alpha = ph.number("alpha");
    p.p_threshold = ph.number_or("p_threshold", p.p_threshold);
    p.replicates = ph.count_or("replicates", p.replicates);
    if (ph.has("half_widths")) {
      const Reader hw = ph.sub("half_widths");
      if (!hw.j.is_object()) ph.fail("half_widths", "must be an object of name: width");
      for (const auto& [name, v] : hw.j.items()) p.half_widths[name] = hw.number(name);
    }
  }
  if (r.has("objective")) c.objective = parse_objective(r.sub("objective"), c.factors.size(), c.seed);
  check_config(c);
  return c;
}

ordered_json to_json(const CampaignConfig& c) {
  ordered_json j;
  j["factors"] = ordered_json::array();
  for (const auto& f : c.factors) {
    ordered_json fj;
    fj["name"] = f.name;
    fj["kind"] = to_string(f.kind);
    fj["low"] = f.low;
    fj["high"] = f.high;
    if (f.mid) fj["mid"] = *f.mid;
    if (f.kind == FactorKind::cyclic) fj["modulus"] = f.modulus;
    fj["policy"] = to_string(f.oob);
    if (f.limit_low) fj["limits"] = {*f.limit_low, *f.limit_high};
    j["factors"].push_back(fj);
  }
  if (c.objective) {
    ordered_json o;
    if (const auto* q = std::get_if<QuadraticSurface>(&*c.objective)) {
      o["kind"] = "builtin_quadratic";
      o["B"] = ordered_json::array();
      for (Eigen::Index i = 0; i < q->b_matrix.rows(); ++i) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index k = 0; k < q->b_matrix.cols(); ++k) row.push_back(q->b_matrix(i, k));
        o["B"].push_back(row);
      }
      o["b"] = std::vector<double>(q->b.data(), q->b.data() + q->b.size());
      o["c"] = q->c;
      o["noise_sigma"] = q->noise_sigma;
      o["seed"] = q->seed;
    } else {
      const auto& e = std::get<ExternalCommand>(*c.objective);
      o["kind"] = "external";
      o["command"] = e.argv;
      o["timeout_seconds"] = e.timeout_seconds;
    }
    j["objective"] = o;
  }
  const auto& p = c.phases;
  ordered_json ph;
  ph["n_c"] = p.n_c;
  ph["n_0_1"] = p.n_0_1;
  ph["n_t"] = p.n_t;
  ph["n_c_ccd"] = p.n_c_ccd;
  ph["n_s"] = p.n_s;
  ph["n_0_2"] = p.n_0_2;
  if (p.alpha) ph["alpha"] = *p.alpha;
  ph["p_threshold"] = p.p_threshold;
  ph["half_widths"] = ordered_json::object();
  for (const auto& [name, d] : p.half_widths) ph["half_widths"][name] = d;
  ph["replicates"] = p.replicates;
  j["phases"] = ph;
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  return j;
}

CampaignConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot read config '{}'", path));
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(fmt::format("config '{}' is not valid JSON", path));
  return parse_config(j);
}

// ---------------------------------------------------------------------------
// state helpers

std::vector<std::string> CampaignState::factor_names() const {
  std::vector<std::string> out;
  for (const auto& f : factors) out.push_back(f.global.name);
  return out;
}

std::vector<std::string> CampaignState::active_names() const {
  std::vector<std::string> out;
  for (const auto& f : factors)
    if (f.active) out.push_back(f.global.name);
  return out;
}

std::vector<FactorSpec> CampaignState::active_specs() const {
  std::vector<FactorSpec> out;
  for (const auto& f : factors)
    if (f.active) out.push_back(f.current);
  return out;
}

std::string CampaignState::config_digest() const {
  // FNV-1a over the canonical config text.
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : to_json(config).dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

Settings settings_of(const CampaignState& state, const Run& run) {
  Settings s;
  for (std::size_t j = 0; j < state.factors.size(); ++j)
    s.push_back({state.factors[j].global.name, run.decoded.at(j)});
  return s;
}

BudgetReport budget_formula(std::size_t k, std::size_t n_c, std::size_t n_0_1, std::size_t n_t,
                            std::size_t p, std::size_t f, std::size_t n_c_ccd, std::size_t n_s,
                            std::size_t n_0_2) {
  BudgetReport b;
  b.k = k;
  b.n_c = n_c;
  b.n_0_1 = n_0_1;
  b.n_t = n_t;
  b.p = p;
  b.f = f;
  b.n_c_ccd = n_c_ccd;
  b.n_s = n_s;
  b.n_0_2 = n_0_2;
  b.total = (std::size_t{1} << k) * n_c + n_0_1 + n_t + (std::size_t{1} << (p - f)) * n_c_ccd +
            2 * p * n_s + n_0_2;
  b.grid2 = ipow(2, k);
  b.grid3 = ipow(3, k);
  b.grid4 = ipow(4, k);
  return b;
}

BudgetReport budget(const CampaignState& s) {
  const auto& ph = s.config.phases;
  std::size_t active = 0;
  for (const auto& f : s.factors) active += f.active ? 1 : 0;
  const bool descended = s.phase != Phase::screening;
  BudgetReport b = budget_formula(s.factors.size(), ph.n_c, ph.n_0_1,
                                  descended ? s.descent_steps : ph.n_t, active, 0, ph.n_c_ccd,
                                  ph.n_s, ph.n_0_2);
  b.confirmation = s.confirm_target ? s.confirmation_runs : ph.replicates;
  b.recorded = s.ledger.size();
  return b;
}

const Run* historic_best(const CampaignState& state) {
  const Run* best = nullptr;
  for (const auto& r : state.ledger) {
    if (r.phase == Phase::confirmation || !r.loss) continue;
    if (!best || *r.loss < *best->loss) best = &r;
  }
  return best;
}

namespace {

const Run* find_run(const std::vector<Run>& runs, std::uint64_t id) {
  for (const auto& r : runs)
    if (r.run_id == id) return &r;
  return nullptr;
}

// Builds a run at nominal coded coordinates over the active factors; dropped
// factors take their held values.
Run make_run(CampaignState& s, Phase phase, PointRole role, std::span<const double> active_coded,
             std::size_t replicate) {
  Run run;
  run.run_id = s.next_run_id++;
  run.phase = phase;
  run.role = role;
  run.replicate = replicate;
  std::size_t a = 0;
  for (const auto& f : s.factors) {
    const double value = f.active ? decode(f.current, active_coded[a++]) : *f.held;
    run.decoded.push_back(value);
    run.coded.push_back(encode(f.current, value));
  }
  return run;
}

Run make_run_at(CampaignState& s, Phase phase, PointRole role, const std::vector<double>& decoded,
                std::size_t replicate) {
  Run run;
  run.run_id = s.next_run_id++;
  run.phase = phase;
  run.role = role;
  run.replicate = replicate;
  run.decoded = decoded;
  for (std::size_t j = 0; j < s.factors.size(); ++j)
    run.coded.push_back(encode(s.factors[j].current, decoded[j]));
  return run;
}

// Enqueues a design over the active factors; replicate index counts earlier
// occurrences of the same nominal point.
void enqueue_design(CampaignState& s, Phase phase, const Design& design) {
  std::map<std::vector<double>, std::size_t> seen;
  for (const auto& point : design.points) {
    const std::size_t rep = seen[point.coded]++;
    s.pending.push_back(make_run(s, phase, point.role, point.coded, rep));
  }
}

std::vector<std::size_t> active_indices(const CampaignState& s) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < s.factors.size(); ++j)
    if (s.factors[j].active) idx.push_back(j);
  return idx;
}

bool has_pending(const CampaignState& s, Phase phase) {
  return std::any_of(s.pending.begin(), s.pending.end(),
                     [&](const Run& r) { return r.phase == phase; });
}

// Recomputes every derived analysis from the ledger.
void refresh(CampaignState& s) {
  s.screening_fit.reset();
  s.best_descent_run.reset();
  s.ccd_fit.reset();
  s.ccd_fit_error.reset();
  s.stationary.reset();
  s.confirmation.reset();

  const auto collect = [&](Phase phase, const std::vector<std::size_t>& columns, Design& design,
                           std::vector<double>& y) {
    design.factors = columns.size();
    for (const auto& r : s.ledger) {
      if (r.phase != phase) continue;
      DesignPoint pt{{}, r.role};
      for (auto c : columns) pt.coded.push_back(r.coded[c]);
      design.points.push_back(std::move(pt));
      y.push_back(*r.loss);
    }
  };

  if (!has_pending(s, Phase::screening)) {
    std::vector<std::size_t> all(s.factors.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = j;
    Design d;
    std::vector<double> y;
    collect(Phase::screening, all, d, y);
    if (!d.points.empty()) {
      try {
        s.screening_fit = fit_design(d, y, ModelOrder::first, s.factor_names(),
                                     FitMode::coefficients_only);
      } catch (const Error&) {
        // left empty; the operator commands report why
      }
    }
  }

  if (s.descent_steps > 0 && !has_pending(s, Phase::descent)) {
    const Run* best = nullptr;
    for (const auto& r : s.ledger) {
      if (r.phase != Phase::descent) continue;
      if (!best || *r.loss < *best->loss ||
          (*r.loss == *best->loss && std::abs(*r.step) < std::abs(*best->step)))
        best = &r;
    }
    if (best) s.best_descent_run = best->run_id;
  }

  const bool ccd_begun = std::any_of(s.ledger.begin(), s.ledger.end(),
                                     [](const Run& r) { return r.phase == Phase::ccd; }) ||
                         has_pending(s, Phase::ccd);
  if (ccd_begun && !has_pending(s, Phase::ccd)) {
    const auto idx = active_indices(s);
    Design d;
    std::vector<double> y;
    collect(Phase::ccd, idx, d, y);
    try {
      s.ccd_fit = fit_design(d, y, ModelOrder::second, s.active_names(),
                             FitMode::coefficients_only);
      s.stationary = stationary_point(*s.ccd_fit, s.active_specs());
    } catch (const Error& e) {
      s.ccd_fit.reset();
      s.ccd_fit_error = e.what();
    }
  }

  if (s.confirm_target) {
    ConfirmationReport rep;
    rep.target = std::string(to_string(*s.confirm_target));
    if (s.stationary) rep.shape = s.stationary->shape;
    const auto idx = active_indices(s);
    // the confirmation runs carry the target settings; recompute them the same
    // way analyze_and_confirm did so a zero-replicate report still has them
    std::vector<double> target;
    if (*s.confirm_target == ConfirmTarget::stationary && s.stationary &&
        s.stationary->x_o_coded) {
      std::size_t a = 0;
      for (const auto& f : s.factors)
        target.push_back(f.active ? s.stationary->x_o_decoded[a++].value : *f.held);
      rep.predicted = s.stationary->predicted_response;
    } else if (const Run* best = historic_best(s)) {
      target = best->decoded;
      if (s.ccd_fit) {
        std::vector<double> x;
        for (auto j : idx) x.push_back(encode(s.factors[j].current, target[j]));
        rep.predicted = predict(*s.ccd_fit, x);
      }
    }
    for (std::size_t j = 0; j < target.size(); ++j)
      rep.settings.push_back({s.factors[j].global.name, target[j]});
    double sum = 0.0;
    for (const auto& r : s.ledger)
      if (r.phase == Phase::confirmation) {
        sum += *r.loss;
        ++rep.observed_runs;
      }
    if (rep.observed_runs) rep.observed_mean = sum / static_cast<double>(rep.observed_runs);
    if (const Run* best = historic_best(s)) {
      rep.historic_min = *best->loss;
      rep.historic_min_run = best->run_id;
    }
    s.confirmation = std::move(rep);
  }
}

void require_phase(const CampaignState& s, Phase phase, std::string_view command) {
  if (s.phase != phase)
    throw Error(fmt::format("{}: campaign is in phase '{}', expected '{}'", command,
                            to_string(s.phase), to_string(phase)));
  if (!s.pending.empty())
    throw Error(fmt::format("{}: {} runs of phase '{}' are still pending", command,
                            s.pending.size(), to_string(s.phase)));
}

// Appends an event with its keys sorted.
void record(CampaignState& s, const ordered_json& event) {
  s.events.push_back(ordered_json::parse(nlohmann::json::parse(event.dump()).dump()));
}

}  // namespace

// ---------------------------------------------------------------------------
// operations

CampaignState init(const CampaignConfig& config) {
  check_config(config);
  CampaignState s;
  s.config = config;
  for (const auto& f : config.factors) s.factors.push_back({f, f, true, std::nullopt});

  Design screening = full_factorial(config.factors.size());
  Design plan{screening.factors, {}};
  for (const auto& pt : screening.points)
    for (std::size_t r = 0; r < config.phases.n_c; ++r) plan.points.push_back(pt);
  for (std::size_t r = 0; r < config.phases.n_0_1; ++r)
    plan.points.push_back({std::vector<double>(config.factors.size(), 0.0), PointRole::center});
  enqueue_design(s, Phase::screening, plan);
  refresh(s);
  return s;
}

CampaignState step(CampaignState s, std::span<const Completion> completed) {
  std::map<std::uint64_t, const Completion*> accepted;
  for (const auto& c : completed) {
    if (!std::isfinite(c.loss))
      throw Error(fmt::format("run {}: loss must be finite, got {}", c.run_id, c.loss));
    if (const Run* done = find_run(s.ledger, c.run_id)) {
      if (*done->loss != c.loss)
        throw Error(fmt::format("run {}: already recorded with loss {}, got {}", c.run_id,
                                *done->loss, c.loss));
      continue;
    }
    if (!find_run(s.pending, c.run_id))
      throw Error(fmt::format("run {}: not a pending run", c.run_id));
    const auto [it, fresh] = accepted.emplace(c.run_id, &c);
    if (!fresh && it->second->loss != c.loss)
      throw Error(fmt::format("run {}: submitted twice with different losses", c.run_id));
  }
  if (accepted.empty()) return s;

  const std::string now = utc_now();
  for (const auto& [id, c] : accepted) {
    auto it = std::find_if(s.pending.begin(), s.pending.end(),
                           [&](const Run& r) { return r.run_id == id; });
    Run run = std::move(*it);
    s.pending.erase(it);
    run.loss = c->loss;
    run.timestamp = c->timestamp.empty() ? now : c->timestamp;
    s.ledger.push_back(std::move(run));
  }
  if (s.phase == Phase::confirmation && s.pending.empty()) s.phase = Phase::done;
  refresh(s);
  return s;
}

CampaignState drop_factors(CampaignState s, const DropRule& rule) {
  require_phase(s, Phase::screening, "drop");
  if (!s.screening_fit) throw Error("drop: no screening fit is available");

  std::vector<std::size_t> to_drop;
  ordered_json event{{"op", "drop"}};
  if (const auto* names = std::get_if<std::vector<std::string>>(&rule)) {
    for (const auto& name : *names) {
      const auto it = std::find_if(s.factors.begin(), s.factors.end(),
                                   [&](const FactorState& f) { return f.global.name == name; });
      if (it == s.factors.end()) throw Error(fmt::format("drop: unknown factor '{}'", name));
      const auto j = static_cast<std::size_t>(it - s.factors.begin());
      if (it->active && std::find(to_drop.begin(), to_drop.end(), j) == to_drop.end())
        to_drop.push_back(j);
    }
    event["names"] = *names;
  } else {
    const double threshold = std::get<PThreshold>(rule).value;
    if (!(threshold >= 0.0 && threshold <= 1.0))
      throw Error(fmt::format("drop: p-threshold must lie in [0, 1], got {}", threshold));
    if (!s.screening_fit->has_inference())
      throw Error("drop: the screening fit has no residual degrees of freedom, p-values are "
                  "unavailable");
    for (std::size_t j = 0; j < s.factors.size(); ++j)
      if (s.factors[j].active && s.screening_fit->p_values[j + 1] > threshold) to_drop.push_back(j);
    event["p_threshold"] = threshold;
  }
  if (to_drop.empty()) return s;
  std::size_t active = 0;
  for (const auto& f : s.factors) active += f.active ? 1 : 0;
  if (to_drop.size() >= active) throw Error("drop: refusing to drop every active factor");

  std::sort(to_drop.begin(), to_drop.end());
  for (auto j : to_drop) {
    auto& f = s.factors[j];
    f.active = false;
    f.held = realize(f.current, f.current.mid_level());
  }
  record(s, std::move(event));
  refresh(s);
  return s;
}

CampaignState begin_descent(CampaignState s, std::vector<double> t_schedule) {
  require_phase(s, Phase::screening, "descend");
  if (!s.screening_fit) throw Error("descend: no screening fit is available");
  if (t_schedule.empty()) throw Error("descend: the step schedule is empty");
  for (double t : t_schedule)
    if (!(t < 0.0) || !std::isfinite(t))
      throw Error(fmt::format("descend: step length {} is not negative; descent requires t < 0",
                              t));

  std::vector<FactorSpec> specs;
  std::vector<std::optional<double>> held;
  for (const auto& f : s.factors) {
    specs.push_back(f.current);
    held.push_back(f.held);
  }
  const auto steps = steepest_path(*s.screening_fit, specs, t_schedule, held);

  for (const auto& st : steps) {
    std::vector<double> decoded;
    for (const auto& nv : st.decoded) decoded.push_back(nv.value);
    Run run = make_run_at(s, Phase::descent, PointRole::descent, decoded, 0);
    run.step = st.t;
    s.pending.push_back(std::move(run));
  }
  s.descent_steps = t_schedule.size();
  s.phase = Phase::descent;
  record(s, {{"op", "descend"}, {"t", t_schedule}});
  refresh(s);
  return s;
}

CampaignState recenter_and_ccd(CampaignState s, const std::map<std::string, double>& half_widths,
                               std::optional<std::uint64_t> best_run) {
  require_phase(s, Phase::descent, "ccd");
  const Run* center = nullptr;
  if (best_run) {
    center = find_run(s.ledger, *best_run);
    if (!center || center->phase != Phase::descent)
      throw Error(fmt::format("ccd: run {} is not a recorded descent run", *best_run));
  } else {
    if (!s.best_descent_run) throw Error("ccd: no descent responses are recorded");
    center = find_run(s.ledger, *s.best_descent_run);
  }

  std::map<std::string, double> widths = s.config.phases.half_widths;
  for (const auto& [name, d] : half_widths) widths[name] = d;
  for (const auto& [name, d] : widths) {
    const auto it = std::find_if(s.factors.begin(), s.factors.end(),
                                 [&](const FactorState& f) { return f.global.name == name; });
    if (it == s.factors.end()) throw Error(fmt::format("ccd: half-width for unknown factor '{}'", name));
    if (!it->active && half_widths.count(name))
      throw Error(fmt::format("ccd: factor '{}' is dropped and has no half-width", name));
    if (!(d > 0.0) || !std::isfinite(d))
      throw Error(fmt::format("ccd: half-width for '{}' must be positive, got {}", name, d));
  }

  const std::vector<double> c = center->decoded;
  for (std::size_t j = 0; j < s.factors.size(); ++j) {
    auto& f = s.factors[j];
    if (!f.active) continue;
    const FactorSpec& g = f.global;
    if (g.oob == OutOfBounds::clamp && (c[j] < g.clamp_low() || c[j] > g.clamp_high()))
      throw Error(fmt::format("ccd: centre {} of factor '{}' lies outside its domain [{}, {}]",
                              c[j], g.name, g.clamp_low(), g.clamp_high()));
    double d = f.current.half_width() / 2.0;
    if (f.current.discrete()) d = std::max(1.0, nint(d));
    if (const auto it = widths.find(g.name); it != widths.end()) d = it->second;
    FactorSpec next = g;
    next.low = c[j] - d;
    next.high = c[j] + d;
    next.mid.reset();
    next.limit_low = g.clamp_low();
    next.limit_high = g.clamp_high();
    try {
      validate(next);
    } catch (const Error& e) {
      throw Error(fmt::format("ccd: half-width {} for '{}': {}", d, g.name, e.what()));
    }
    f.current = next;
  }
  // coded coordinates of dropped factors are re-expressed only through their
  // unchanged coding, so nothing else moves

  CcdSpec spec;
  spec.factors = active_indices(s).size();
  spec.corner_replicates = s.config.phases.n_c_ccd;
  spec.star_replicates = s.config.phases.n_s;
  spec.center_replicates = s.config.phases.n_0_2;
  spec.alpha = s.config.phases.alpha;
  enqueue_design(s, Phase::ccd, ccd(spec));
  s.phase = Phase::ccd;

  ordered_json event{{"op", "ccd"}, {"half_widths", ordered_json::object()}};
  for (const auto& [name, d] : half_widths) event["half_widths"][name] = d;
  event["best_run"] = best_run ? ordered_json(*best_run) : ordered_json(nullptr);
  record(s, std::move(event));
  refresh(s);
  return s;
}

CampaignState analyze_and_confirm(CampaignState s, std::size_t replicates, ConfirmTarget target) {
  require_phase(s, Phase::ccd, "confirm");
  if (!s.ccd_fit)
    throw Error(fmt::format("confirm: second-order fit failed: {}",
                            s.ccd_fit_error.value_or("no CCD responses")));

  std::vector<double> decoded;
  if (target == ConfirmTarget::stationary) {
    if (!s.stationary || !s.stationary->x_o_coded)
      throw Error("confirm: B is singular (degenerate surface), there is no stationary point; "
                  "confirm the historic best instead");
    std::size_t a = 0;
    for (const auto& f : s.factors)
      decoded.push_back(f.active ? s.stationary->x_o_decoded[a++].value : *f.held);
  } else {
    const Run* best = historic_best(s);
    if (!best) throw Error("confirm: the ledger is empty");
    decoded = best->decoded;
  }
  for (std::size_t r = 0; r < replicates; ++r)
    s.pending.push_back(make_run_at(s, Phase::confirmation, PointRole::confirmation, decoded, r));
  s.confirmation_runs = replicates;
  s.confirm_target = target;
  s.phase = replicates == 0 ? Phase::done : Phase::confirmation;
  record(s,
         {{"op", "confirm"}, {"replicates", replicates}, {"target", to_string(target)}});
  refresh(s);
  return s;
}

CampaignState autopilot_advance(CampaignState s) {
  if (!s.pending.empty()) return s;
  const auto& ph = s.config.phases;
  switch (s.phase) {
    case Phase::screening:
      if (s.screening_fit && s.screening_fit->has_inference()) {
        std::size_t keep = 0;
        for (std::size_t j = 0; j < s.factors.size(); ++j)
          keep += s.screening_fit->p_values[j + 1] <= ph.p_threshold ? 1 : 0;
        if (keep > 0) s = drop_factors(std::move(s), PThreshold{ph.p_threshold});
      }
      return begin_descent(std::move(s), default_descent_schedule(ph.n_t));
    case Phase::descent:
      return recenter_and_ccd(std::move(s));
    case Phase::ccd: {
      const bool has_point = s.stationary && s.stationary->x_o_coded;
      return analyze_and_confirm(std::move(s), ph.replicates,
                                 has_point ? ConfirmTarget::stationary : ConfirmTarget::historic_best);
    }
    case Phase::confirmation:
    case Phase::done:
      return s;
  }
  return s;
}

std::vector<Completion> evaluate_pending(const CampaignState& s, const Objective& objective,
                                         std::size_t jobs, std::vector<EvaluationFailure>* failures) {
  const std::size_t n = s.pending.size();
  std::vector<std::optional<double>> losses(n);
  std::vector<std::optional<EvaluationFailure>> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const Run& run = s.pending[i];
      try {
        losses[i] = objective.evaluate(settings_of(s, run), run.run_id);
      } catch (const EvaluationError& e) {
        errors[i] = EvaluationFailure{run.run_id, e.what(), e.diagnostics()};
      } catch (const std::exception& e) {
        errors[i] = EvaluationFailure{run.run_id, e.what(), {}};
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), std::max<std::size_t>(n, 1));
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  std::vector<Completion> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (losses[i]) out.push_back({s.pending[i].run_id, *losses[i], {}});
    if (errors[i] && failures) failures->push_back(*errors[i]);
  }
  std::sort(out.begin(), out.end(),
            [](const Completion& a, const Completion& b) { return a.run_id < b.run_id; });
  return out;
}

// ---------------------------------------------------------------------------
// replay and serialisation

namespace {

CampaignState apply_event(CampaignState s, const json& e) {
  const std::string op = e.at("op").get<std::string>();
  if (op == "drop") {
    if (e.contains("names")) return drop_factors(std::move(s), e.at("names").get<std::vector<std::string>>());
    return drop_factors(std::move(s), PThreshold{e.at("p_threshold").get<double>()});
  }
  if (op == "descend") return begin_descent(std::move(s), e.at("t").get<std::vector<double>>());
  if (op == "ccd") {
    std::map<std::string, double> widths;
    for (const auto& [name, d] : e.at("half_widths").items()) widths[name] = d.get<double>();
    std::optional<std::uint64_t> best;
    if (!e.at("best_run").is_null()) best = e.at("best_run").get<std::uint64_t>();
    return recenter_and_ccd(std::move(s), widths, best);
  }
  if (op == "confirm")
    return analyze_and_confirm(std::move(s), e.at("replicates").get<std::size_t>(),
                               parse_confirm_target(e.at("target").get<std::string>()));
  throw Error(fmt::format("unknown event '{}'", op));
}

ordered_json run_to_json(const Run& r) {
  ordered_json j;
  j["run_id"] = r.run_id;
  j["phase"] = to_string(r.phase);
  j["role"] = to_string(r.role);
  j["replicate"] = r.replicate;
  if (r.step) j["t"] = *r.step;
  j["decoded"] = r.decoded;
  j["coded"] = r.coded;
  if (r.loss) j["loss"] = *r.loss;
  if (!r.timestamp.empty()) j["timestamp"] = r.timestamp;
  return j;
}

Run run_from_json(const json& j) {
  Run r;
  r.run_id = j.at("run_id").get<std::uint64_t>();
  r.phase = parse_phase(j.at("phase").get<std::string>());
  r.role = parse_point_role(j.at("role").get<std::string>());
  r.replicate = j.at("replicate").get<std::size_t>();
  if (j.contains("t")) r.step = j.at("t").get<double>();
  r.decoded = j.at("decoded").get<std::vector<double>>();
  r.coded = j.at("coded").get<std::vector<double>>();
  if (j.contains("loss")) r.loss = j.at("loss").get<double>();
  if (j.contains("timestamp")) r.timestamp = j.at("timestamp").get<std::string>();
  return r;
}

ordered_json fit_to_json(const RegressionFit& fit) {
  ordered_json j;
  j["order"] = to_string(fit.order);
  j["dof"] = fit.dof;
  j["residual_variance"] = num(fit.residual_variance);
  j["terms"] = ordered_json::array();
  for (std::size_t i = 0; i < fit.coefficients.size(); ++i) {
    ordered_json t{{"term", fit.term_names[i]}, {"estimate", num(fit.coefficients[i])}};
    if (fit.has_inference()) {
      t["std_error"] = num(fit.standard_errors[i]);
      t["t"] = num(fit.t_values[i]);
      t["p"] = num(fit.p_values[i]);
    }
    j["terms"].push_back(t);
  }
  return j;
}

ordered_json settings_to_json(const Settings& s) {
  ordered_json j = ordered_json::object();
  for (const auto& nv : s) j[nv.name] = nv.value;
  return j;
}

ordered_json analysis_to_json(const CampaignState& s) {
  ordered_json a = ordered_json::object();
  if (s.screening_fit) a["screening_fit"] = fit_to_json(*s.screening_fit);
  if (s.best_descent_run) a["best_descent_run"] = *s.best_descent_run;
  if (s.ccd_fit) a["ccd_fit"] = fit_to_json(*s.ccd_fit);
  if (s.ccd_fit_error) a["ccd_fit_error"] = *s.ccd_fit_error;
  if (s.stationary) {
    ordered_json st;
    st["shape"] = to_string(s.stationary->shape);
    st["eigenvalues"] = ordered_json::array();
    for (double v : s.stationary->eigenvalues) st["eigenvalues"].push_back(num(v));
    if (s.stationary->x_o_coded) {
      st["x_o_coded"] = ordered_json::array();
      for (double v : *s.stationary->x_o_coded) st["x_o_coded"].push_back(num(v));
      st["x_o_decoded"] = settings_to_json(s.stationary->x_o_decoded);
      st["predicted"] = num(*s.stationary->predicted_response);
      st["out_of_region"] = s.stationary->out_of_region;
    }
    a["stationary"] = st;
  }
  if (s.confirmation) {
    const auto& c = *s.confirmation;
    ordered_json cj;
    cj["target"] = c.target;
    cj["settings"] = settings_to_json(c.settings);
    cj["predicted"] = c.predicted ? num(*c.predicted) : ordered_json(nullptr);
    cj["observed_mean"] = c.observed_mean ? num(*c.observed_mean) : ordered_json(nullptr);
    cj["observed_runs"] = c.observed_runs;
    cj["historic_min"] = c.historic_min;
    cj["historic_min_run"] = c.historic_min_run;
    a["confirmation"] = cj;
  }
  const BudgetReport b = budget(s);
  a["budget"] = {{"total", b.total}, {"confirmation", b.confirmation}, {"recorded", b.recorded}};
  return a;
}

}  // namespace

CampaignState replay(const CampaignConfig& config, std::span<const ordered_json> events,
                     std::span<const Run> ledger) {
  CampaignState s = init(config);
  auto submit = [&] {
    std::vector<Completion> batch;
    for (const auto& r : ledger)
      if (r.loss && find_run(s.pending, r.run_id)) batch.push_back({r.run_id, *r.loss, r.timestamp});
    if (!batch.empty()) s = step(std::move(s), batch);
  };
  for (const auto& e : events) {
    submit();
    s = apply_event(std::move(s), json::parse(e.dump()));
  }
  submit();
  return s;
}

ordered_json to_json(const CampaignState& s) {
  ordered_json j;
  j["schema"] = kStateSchemaVersion;
  j["config_digest"] = s.config_digest();
  j["config"] = to_json(s.config);
  j["phase"] = to_string(s.phase);
  j["next_run_id"] = s.next_run_id;
  j["descent_steps"] = s.descent_steps;
  j["confirmation_runs"] = s.confirmation_runs;
  j["confirm_target"] =
      s.confirm_target ? ordered_json(to_string(*s.confirm_target)) : ordered_json(nullptr);
  j["factors"] = ordered_json::array();
  for (const auto& f : s.factors) {
    ordered_json fj;
    fj["name"] = f.global.name;
    fj["active"] = f.active;
    fj["held"] = f.held ? ordered_json(*f.held) : ordered_json(nullptr);
    fj["low"] = f.current.low;
    fj["high"] = f.current.high;
    fj["mid"] = f.current.mid ? ordered_json(*f.current.mid) : ordered_json(nullptr);
    if (f.current.limit_low) fj["limits"] = {*f.current.limit_low, *f.current.limit_high};
    j["factors"].push_back(fj);
  }
  j["events"] = s.events;
  j["pending"] = ordered_json::array();
  for (const auto& r : s.pending) j["pending"].push_back(run_to_json(r));
  j["runs"] = ordered_json::array();
  for (const auto& r : s.ledger) j["runs"].push_back(run_to_json(r));
  j["analysis"] = analysis_to_json(s);
  return j;
}

CampaignState state_from_json(const json& j) {
  try {
    const int schema = j.at("schema").get<int>();
    if (schema != kStateSchemaVersion)
      throw Error(fmt::format("campaign schema {} is not supported (expected {})", schema,
                              kStateSchemaVersion));
    CampaignState s;
    s.config = parse_config(j.at("config"));
    if (j.at("config_digest").get<std::string>() != s.config_digest())
      throw Error("campaign config digest does not match its config");
    s.phase = parse_phase(j.at("phase").get<std::string>());
    s.next_run_id = j.at("next_run_id").get<std::uint64_t>();
    s.descent_steps = j.at("descent_steps").get<std::size_t>();
    s.confirmation_runs = j.at("confirmation_runs").get<std::size_t>();
    if (!j.at("confirm_target").is_null())
      s.confirm_target = parse_confirm_target(j.at("confirm_target").get<std::string>());
    const auto& fs = j.at("factors");
    if (fs.size() != s.config.factors.size()) throw Error("campaign factor list does not match config");
    for (std::size_t i = 0; i < fs.size(); ++i) {
      FactorState f{s.config.factors[i], s.config.factors[i], fs[i].at("active").get<bool>(),
                    std::nullopt};
      if (!fs[i].at("held").is_null()) f.held = fs[i].at("held").get<double>();
      f.current.low = fs[i].at("low").get<double>();
      f.current.high = fs[i].at("high").get<double>();
      f.current.mid.reset();
      if (!fs[i].at("mid").is_null()) f.current.mid = fs[i].at("mid").get<double>();
      f.current.limit_low.reset();
      f.current.limit_high.reset();
      if (fs[i].contains("limits")) {
        f.current.limit_low = fs[i].at("limits")[0].get<double>();
        f.current.limit_high = fs[i].at("limits")[1].get<double>();
      }
      s.factors.push_back(std::move(f));
    }
    for (const auto& e : j.at("events")) record(s, ordered_json::parse(e.dump()));
    for (const auto& r : j.at("pending")) s.pending.push_back(run_from_json(r));
    for (const auto& r : j.at("runs")) s.ledger.push_back(run_from_json(r));
    refresh(s);
    return s;
  } catch (const json::exception& e) {
    throw Error(fmt::format("campaign state is malformed: {}", e.what()));
  }
}

}  // namespace rsmtune
