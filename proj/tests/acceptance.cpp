// Acceptance checks: one PASS/FAIL line per criterion, exit status 0 only
// when every criterion passes.

#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <string>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "rsmtune/campaign.hpp"
#include "rsmtune/cli.hpp"
#include "rsmtune/doe.hpp"
#include "rsmtune/objective.hpp"
#include "rsmtune/regress.hpp"
#include "rsmtune/search.hpp"
#include "rsmtune/store.hpp"
#include "support.hpp"

using namespace rsmtune;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

Verdict descent_settings() {
  Verdict v;
  const auto steps = steepest_path(testing::published_screening_fit(), testing::cann_factors(),
                                   std::vector<double>{-1});
  const std::vector<double> want{5, 20, 18, 10, 703, 8542, 3};
  std::string got;
  for (std::size_t j = 0; j < want.size(); ++j) {
    const auto& nv = steps[0].decoded[j];
    got += fmt::format("{}{} {}", j ? ", " : "", nv.name, nv.value);
    v.require(nv.value == want[j], fmt::format("{} = {}, expected {}", nv.name, nv.value, want[j]));
  }
  if (v.pass) v.detail = got;
  return v;
}

Verdict design_sizes() {
  Verdict v;
  const std::size_t screening = testing::screening_design(7, 4).size();
  const std::size_t complete = ccd(CcdSpec{7, 1, 1, 4, std::nullopt, {}}).size();
  const std::size_t reduced = ccd(CcdSpec{5, 1, 1, 4, std::nullopt, {}}).size();
  const BudgetReport full = budget_formula(7, 1, 4, 10, 7, 0, 1, 1, 4);
  const BudgetReport small = budget_formula(7, 1, 4, 10, 5, 0, 1, 1, 4);
  v.require(screening == 132, fmt::format("screening {}", screening));
  v.require(complete == 146, fmt::format("complete CCD {}", complete));
  v.require(reduced == 46, fmt::format("reduced CCD {}", reduced));
  v.require(full.total == 288, fmt::format("complete total {}", full.total));
  v.require(small.total == 188, fmt::format("reduced total {}", small.total));
  v.require(full.grid2 == 128 && full.grid3 == 2187 && full.grid4 == 16384, "grid comparators");
  if (v.pass)
    v.detail = fmt::format("{} / {} / {} runs, totals {} and {}, GS {}/{}/{}", screening, complete,
                           reduced, full.total, small.total, full.grid2, full.grid3, full.grid4);
  return v;
}

Verdict star_points() {
  Verdict v;
  const double a7 = rotatable_alpha(7, 0, 1, 1);
  const double a5 = rotatable_alpha(5, 0, 1, 1);
  v.require(std::abs(a7 - 3.363586) <= 1e-6, fmt::format("alpha(7) = {:.7f}", a7));
  v.require(std::abs(a5 - 2.378414) <= 1e-6, fmt::format("alpha(5) = {:.7f}", a5));
  FactorSpec op;
  op.name = "Op";
  op.kind = FactorKind::cyclic;
  op.low = 4;
  op.high = 6;
  op.modulus = 7;
  op.oob = OutOfBounds::wrap;
  const double raw7 = nint(a7 * op.half_width() + op.center());
  const double raw5 = nint(a5 * op.half_width() + op.center());
  const double wrapped = decode(op, a7);
  v.require(raw7 == 8, fmt::format("nint(8.3636) = {}", raw7));
  v.require(wrapped == 1, fmt::format("wrap gives {}", wrapped));
  v.require(raw5 == 7, fmt::format("nint(7.3784) = {}", raw5));
  if (v.pass)
    v.detail = fmt::format("alpha {:.6f} / {:.6f}; Op star {} -> {}, {}", a7, a5, raw7, wrapped, raw5);
  return v;
}

Verdict d_ordering() {
  Verdict v;
  auto specs = [](OutOfBounds oob, bool reduced) {
    FactorSpec op;
    op.name = "Op";
    op.kind = FactorKind::cyclic;
    op.low = 4;
    op.high = 6;
    op.modulus = 7;
    op.oob = oob;
    op.limit_low = 0;
    op.limit_high = 6;
    auto integer = [](std::string name, double lo, double hi) {
      FactorSpec f;
      f.name = std::move(name);
      f.kind = FactorKind::integer;
      f.low = lo;
      f.high = hi;
      return f;
    };
    std::vector<FactorSpec> out{op};
    if (!reduced) out.push_back(integer("N1", 15, 25));
    out.push_back(integer("N2", 13, 23));
    if (!reduced) out.push_back(integer("N3", 8, 12));
    out.push_back(integer("Ep", 503, 903));
    out.push_back(integer("Bh", 6542, 10542));
    out.push_back(integer("Lr", 2, 4));
    return out;
  };
  std::string detail;
  for (bool reduced : {false, true}) {
    const auto clamp = specs(OutOfBounds::clamp, reduced);
    const auto wrap = specs(OutOfBounds::wrap, reduced);
    const Design base = ccd(CcdSpec{clamp.size(), 1, 1, 4, std::nullopt, {}});
    const double dc = d_criterion(realized(base, clamp), ModelOrder::second);
    const double dw = d_criterion(realized(base, wrap), ModelOrder::second);
    const char* label = reduced ? "reduced" : "complete";
    v.require(dw < dc, fmt::format("{}: modulo {:.3e} >= clamp {:.3e}", label, dw, dc));
    detail += fmt::format("{}{} modulo {:.3e} < clamp {:.3e}", detail.empty() ? "" : "; ", label,
                          dw, dc);
  }
  if (v.pass) v.detail = detail;
  return v;
}

// Runs an autopilot campaign in memory and returns the final state.
CampaignState autopilot(const CampaignConfig& config) {
  CampaignState s = init(config);
  const auto objective = make_objective(*config.objective, config.factors);
  while (s.phase != Phase::done) {
    if (s.pending.empty()) {
      s = autopilot_advance(std::move(s));
      continue;
    }
    s = step(std::move(s), evaluate_pending(s, *objective, 4));
  }
  return s;
}

// Largest coded-unit distance between the campaign's x_o and the true
// minimiser, in the coding of the declared factors.
double recovery_error(const CampaignState& s, const testing::KnownQuadratic& q) {
  double worst = 0.0;
  for (std::size_t j = 0; j < s.factors.size(); ++j) {
    const double x = encode(s.factors[j].global, s.stationary->x_o_decoded[j].value);
    worst = std::max(worst, std::abs(x - q.x_star(static_cast<Eigen::Index>(j))));
  }
  return worst;
}

Verdict end_to_end() {
  Verdict v;
  const auto q = testing::seven_factor_bowl();
  const CampaignState clean = autopilot(testing::bowl_config(q, 0.0, 11));
  const CampaignState noisy = autopilot(testing::bowl_config(q, 0.01, 11));
  for (const auto* s : {&clean, &noisy}) {
    if (!s->stationary || !s->stationary->x_o_coded || s->active_names().size() != 7) {
      v.require(false, "campaign did not reach a 7-factor stationary point");
      return v;
    }
  }
  const double e0 = recovery_error(clean, q);
  const double f0 = std::abs(*clean.stationary->predicted_response - q.f_star);
  const double e1 = recovery_error(noisy, q);
  v.require(clean.stationary->shape == SurfaceShape::minimum, "noiseless surface not a minimum");
  v.require(e0 <= 1e-2, fmt::format("noiseless x_o off by {:.3e}", e0));
  v.require(f0 <= 1e-6, fmt::format("noiseless predicted loss off by {:.3e}", f0));
  v.require(e1 <= 0.1, fmt::format("sigma 0.01 x_o off by {:.3e}", e1));
  if (v.pass)
    v.detail = fmt::format("noiseless |dx| {:.2e}, |df| {:.2e}; sigma 0.01 |dx| {:.2e}; {} runs",
                           e0, f0, e1, clean.ledger.size());
  return v;
}

Verdict numerical_properties() {
  Verdict v;
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;

  // OLS recovery and residual orthogonality on a CCD with extra points
  double worst_recovery = 0.0, worst_orth = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t p = 2 + trial % 4;
    Design d = ccd(CcdSpec{p, 1, 1, 3, std::nullopt, {}});
    const std::size_t terms = term_count(p, ModelOrder::second);
    const Eigen::MatrixXd x = model_matrix(d, ModelOrder::second);
    Eigen::VectorXd beta(terms);
    for (auto& b : beta) b = 5 * n01(rng);
    const Eigen::VectorXd y = x * beta;
    const RegressionFit exact = ols_fit(x, std::vector<double>(y.data(), y.data() + y.size()),
                                        ModelOrder::second);
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(exact.coefficients.data(), terms);
    worst_recovery = std::max(worst_recovery, (b - beta).norm() / beta.norm());
    Eigen::VectorXd noisy = y;
    for (auto& e : noisy) e += n01(rng);
    const RegressionFit nf = ols_fit(x, std::vector<double>(noisy.data(), noisy.data() + noisy.size()),
                                     ModelOrder::second);
    const Eigen::VectorXd nb = Eigen::Map<const Eigen::VectorXd>(nf.coefficients.data(), terms);
    worst_orth = std::max(worst_orth, (x.transpose() * (noisy - x * nb)).norm() / noisy.norm());
  }
  v.require(worst_recovery <= 1e-8, fmt::format("OLS recovery {:.2e}", worst_recovery));
  v.require(worst_orth <= 1e-8, fmt::format("residual orthogonality {:.2e}", worst_orth));

  // rotatability
  double spread = 0.0;
  for (std::size_t p : {2u, 3u, 5u, 7u}) {
    const Design d = ccd(CcdSpec{p, 1, 1, 4, std::nullopt, {}});
    const Eigen::MatrixXd x = model_matrix(d, ModelOrder::second);
    const Eigen::MatrixXd inv = (x.transpose() * x).inverse();
    for (double r : {0.5, 1.0}) {
      double lo = INFINITY, hi = -INFINITY;
      for (int k = 0; k < 40; ++k) {
        std::vector<double> u(p);
        double norm = 0;
        for (auto& e : u) {
          e = n01(rng);
          norm += e * e;
        }
        for (auto& e : u) e *= r / std::sqrt(norm);
        const Eigen::RowVectorXd row = model_row(u, ModelOrder::second);
        const double var = row * inv * row.transpose();
        lo = std::min(lo, var);
        hi = std::max(hi, var);
      }
      spread = std::max(spread, hi - lo);
    }
  }
  v.require(spread <= 1e-8, fmt::format("rotatability spread {:.2e}", spread));

  // stationary point gradient and the 2-factor grid oracle
  double worst_grad = 0.0;
  int minima = 0;
  bool grid_ok = true;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t p = 2 + trial % 2;
    RegressionFit fit;
    fit.order = ModelOrder::second;
    fit.factors = p;
    fit.term_names = term_names(p, ModelOrder::second);
    for (std::size_t i = 0; i < term_count(p, ModelOrder::second); ++i)
      fit.coefficients.push_back(n01(rng) + (i > p && i <= 2 * p ? 1.0 : 0.0));
    std::vector<FactorSpec> specs(p);
    for (std::size_t j = 0; j < p; ++j) specs[j].name = fmt::format("x{}", j + 1);
    const StationaryAnalysis st = stationary_point(fit, specs);
    if (!st.x_o_coded) continue;
    const Eigen::VectorXd xo = Eigen::Map<const Eigen::VectorXd>(st.x_o_coded->data(), p);
    worst_grad = std::max(worst_grad, (st.b_star + 2 * st.b_matrix * xo).norm() /
                                          (st.b_star.norm() + 1));
    if (p == 2 && st.shape == SurfaceShape::minimum) {
      ++minima;
      double best = INFINITY;
      for (int i = 0; i <= 100; ++i)
        for (int k = 0; k <= 100; ++k)
          best = std::min(best, predict(fit, std::vector<double>{-2 + 0.04 * i, -2 + 0.04 * k}));
      grid_ok = grid_ok && *st.predicted_response <= best + 1e-9;
    }
  }
  v.require(worst_grad <= 1e-8, fmt::format("stationary gradient {:.2e}", worst_grad));
  v.require(minima > 0 && grid_ok, "grid oracle beat a classified minimum");

  const double p = t_pvalue(2.0, 10);
  const double oracle = testing::simpson_t_pvalue(2.0, 10);
  v.require(std::abs(p - 0.07339) <= 1e-4 && std::abs(p - oracle) <= 1e-8,
            fmt::format("t_pvalue(2, 10) = {:.6f}, oracle {:.6f}", p, oracle));
  if (v.pass)
    v.detail = fmt::format(
        "recovery {:.1e}, orthogonality {:.1e}, rotatability {:.1e}, gradient {:.1e}, "
        "{} grid-checked minima, t_pvalue(2,10) {:.5f}",
        worst_recovery, worst_orth, spread, worst_grad, minima, p);
  return v;
}

Verdict deviance() {
  Verdict v;
  const double perfect = poisson_deviance({{3, 7}, {3, 7}});
  const double one = poisson_deviance({{1}, {2}});
  const double zero = poisson_deviance({{0}, {0.5}});
  v.require(perfect == 0.0, fmt::format("perfect fit {}", perfect));
  v.require(std::abs(one - 0.613706) <= 1e-6, fmt::format("N=1, fitted=2 gives {:.7f}", one));
  v.require(zero == 2 * 0.5, fmt::format("N=0 gives {}", zero));
  if (v.pass) v.detail = fmt::format("perfect {}, N=1/fitted=2 {:.6f}, N=0 {}", perfect, one, zero);
  return v;
}

Verdict determinism() {
  Verdict v;
  testing::TempDir tmp;
  const auto q = testing::seven_factor_bowl();
  testing::write_text(tmp.path / "bowl.json", to_json(testing::bowl_config(q, 0.01, 99)).dump());
  for (const char* dir : {"a", "b", "c"})
    v.require(dispatch({"init", tmp.str("bowl.json"), tmp.str(dir)}).exit_code == 0,
              fmt::format("init {}", dir));
  v.require(dispatch({"-C", tmp.str("a"), "run", "--autopilot", "--jobs", "1"}).exit_code == 0,
            "serial run");
  v.require(dispatch({"-C", tmp.str("b"), "run", "--autopilot", "--jobs", "8"}).exit_code == 0,
            "parallel run");
  v.require(dispatch({"-C", tmp.str("c"), "run", "--autopilot", "--jobs", "1"}).exit_code == 0,
            "repeat run");
  if (!v.pass) return v;
  const auto csv = [&](const char* dir) {
    return testing::without_last_column(testing::read_text(tmp.path / dir / "runs.csv"));
  };
  v.require(csv("a") == csv("c"), "identical config and seed gave different runs.csv");
  v.require(csv("a") == csv("b"), "jobs 8 ledger differs from jobs 1");
  const CampaignState s = load_campaign(tmp.path / "a");
  v.require(to_json(replay(s.config, s.events, s.ledger)).dump() == to_json(s).dump(),
            "ledger replay differs");
  v.require(dispatch({"-C", tmp.str("a"), "verify"}).exit_code == 0, "verify command failed");
  if (v.pass)
    v.detail = fmt::format("{} runs; runs.csv identical across reruns and jobs 1/8; replay exact",
                           s.ledger.size());
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"published descent settings", descent_settings},
      {"design sizes and budgets", design_sizes},
      {"star-point arithmetic", star_points},
      {"D-criterion ordering", d_ordering},
      {"end-to-end quadratic recovery", end_to_end},
      {"numerical property suites", numerical_properties},
      {"Poisson deviance", deviance},
      {"determinism and durability", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, fmt::format("exception: {}", e.what())};
    }
    failed += v.pass ? 0 : 1;
    std::cout << fmt::format("{} [{}] {}: {}\n", v.pass ? "PASS" : "FAIL", i + 1,
                             criteria[i].first, v.detail);
  }
  std::cout << fmt::format("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
