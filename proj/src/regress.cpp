#include "rsmtune/regress.hpp"

#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "rsmtune/error.hpp"

namespace rsmtune {

namespace {

constexpr double kConditionLimit = 1e8;
constexpr double kRankTolerance = 1e-10;

std::size_t factors_for(std::size_t columns, ModelOrder order) {
  for (std::size_t p = 0; term_count(p, order) <= columns; ++p)
    if (term_count(p, order) == columns) return p;
  throw Error(fmt::format("{} columns do not form a {}-order model matrix", columns,
                          to_string(order)));
}

}  // namespace

std::size_t term_count(std::size_t factors, ModelOrder order) {
  if (order == ModelOrder::first) return 1 + factors;
  return 1 + 2 * factors + factors * (factors - (factors > 0 ? 1 : 0)) / 2;
}

std::vector<std::string> term_names(std::span<const std::string> factor_names, ModelOrder order) {
  const std::size_t p = factor_names.size();
  std::vector<std::string> names;
  names.reserve(term_count(p, order));
  names.emplace_back("Intercept");
  for (const auto& n : factor_names) names.push_back(n);
  if (order == ModelOrder::second) {
    for (const auto& n : factor_names) names.push_back(n + "^2");
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = i + 1; k < p; ++k)
        names.push_back(factor_names[i] + "*" + factor_names[k]);
  }
  return names;
}

std::vector<std::string> term_names(std::size_t factors, ModelOrder order) {
  std::vector<std::string> labels;
  for (std::size_t j = 0; j < factors; ++j) labels.push_back(fmt::format("x{}", j + 1));
  return term_names(labels, order);
}

Eigen::RowVectorXd model_row(std::span<const double> x, ModelOrder order) {
  const std::size_t p = x.size();
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(term_count(p, order)));
  Eigen::Index c = 0;
  row(c++) = 1.0;
  for (double v : x) row(c++) = v;
  if (order == ModelOrder::second) {
    for (double v : x) row(c++) = v * v;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = i + 1; k < p; ++k) row(c++) = x[i] * x[k];
  }
  return row;
}

Eigen::MatrixXd model_matrix(const Design& design, ModelOrder order) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(design.size()),
                    static_cast<Eigen::Index>(term_count(design.factors, order)));
  for (std::size_t r = 0; r < design.size(); ++r)
    x.row(static_cast<Eigen::Index>(r)) = model_row(design.points[r].coded, order);
  return x;
}

std::vector<std::size_t> collinear_columns(const Eigen::MatrixXd& x) {
  // Gram-Schmidt with one re-orthogonalisation pass; a column whose residual
  // against the accepted basis is negligible relative to its own norm is
  // collinear with the columns before it.
  std::vector<std::size_t> collinear;
  std::vector<Eigen::VectorXd> basis;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::VectorXd v = x.col(j);
    const double norm = v.norm();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& q : basis) v -= q.dot(v) * q;
    const double residual = v.norm();
    if (norm == 0.0 || residual <= kRankTolerance * norm) {
      collinear.push_back(static_cast<std::size_t>(j));
    } else {
      basis.push_back(v / residual);
    }
  }
  return collinear;
}

std::vector<double> RegressionFit::linear() const {
  return {coefficients.begin() + 1, coefficients.begin() + 1 + static_cast<long>(factors)};
}

RegressionFit ols_fit(const Eigen::MatrixXd& x, std::span<const double> y, ModelOrder order,
                      std::vector<std::string> names, FitMode mode) {
  const auto n = x.rows();
  const auto k = x.cols();
  if (static_cast<std::size_t>(n) != y.size())
    throw Error(fmt::format("model matrix has {} rows but {} responses were given", n, y.size()));
  RegressionFit fit;
  fit.order = order;
  fit.factors = factors_for(static_cast<std::size_t>(k), order);
  fit.term_names = names.empty() ? term_names(fit.factors, order) : std::move(names);
  if (fit.term_names.size() != static_cast<std::size_t>(k))
    throw Error(fmt::format("{} term names given for {} columns", fit.term_names.size(), k));

  if (const auto collinear = collinear_columns(x); !collinear.empty() || n < k) {
    std::vector<std::string> bad;
    for (auto c : collinear) bad.push_back(fit.term_names[c]);
    throw RankDeficientError(
        fmt::format("model matrix is rank deficient ({} runs, {} terms); collinear terms: {}", n,
                    k, bad.empty() ? std::string("-") : fmt::format("{}", fmt::join(bad, ", "))),
        bad);
  }
  fit.dof = static_cast<long>(n - k);
  if (fit.dof <= 0 && mode == FitMode::inference)
    throw Error(fmt::format("saturated model: {} runs for {} terms leaves no residual degrees of "
                            "freedom for inference",
                            n, k));

  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
  const Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::VectorXd beta;
  Eigen::MatrixXd xtx_inv;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx);
  if (ldlt.info() == Eigen::Success && ldlt.rcond() * kConditionLimit >= 1.0) {
    beta = ldlt.solve(x.transpose() * yv);
    xtx_inv = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
  } else {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv =
        r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    beta = qr.solve(yv);
    xtx_inv = r_inv * r_inv.transpose();
  }

  fit.coefficients.assign(beta.data(), beta.data() + k);
  const double rss = (yv - x * beta).squaredNorm();
  fit.residual_variance = fit.dof > 0 ? rss / static_cast<double>(fit.dof) : 0.0;
  if (fit.dof <= 0) return fit;

  fit.standard_errors.resize(static_cast<std::size_t>(k));
  fit.t_values.resize(static_cast<std::size_t>(k));
  fit.p_values.resize(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const double se = std::sqrt(std::max(0.0, fit.residual_variance * xtx_inv(i, i)));
    const double b = fit.coefficients[u];
    fit.standard_errors[u] = se;
    if (se > 0.0) {
      fit.t_values[u] = b / se;
    } else if (b == 0.0) {
      fit.t_values[u] = 0.0;
    } else {
      fit.t_values[u] = std::copysign(std::numeric_limits<double>::infinity(), b);
    }
    fit.p_values[u] = t_pvalue(fit.t_values[u], fit.dof);
  }
  return fit;
}

RegressionFit fit_design(const Design& design, std::span<const double> y, ModelOrder order,
                         std::span<const std::string> factor_names, FitMode mode) {
  std::vector<std::string> names;
  if (!factor_names.empty()) {
    if (factor_names.size() != design.factors)
      throw Error(fmt::format("{} factor names for a {}-factor design", factor_names.size(),
                              design.factors));
    names = term_names(factor_names, order);
  }
  return ols_fit(model_matrix(design, order), y, order, std::move(names), mode);
}

double t_pvalue(double t, long dof) {
  if (dof < 1) throw Error(fmt::format("t_pvalue: dof must be >= 1, got {}", dof));
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  const double v = static_cast<double>(dof);
  // P(|T| > t) = I_{v / (v + t^2)}(v/2, 1/2)
  return boost::math::ibeta(v / 2.0, 0.5, v / (v + t * t));
}

double predict(const RegressionFit& fit, std::span<const double> coded) {
  if (coded.size() != fit.factors)
    throw Error(fmt::format("point has {} coordinates but the fit has {} factors", coded.size(),
                            fit.factors));
  const Eigen::RowVectorXd row = model_row(coded, fit.order);
  const Eigen::Map<const Eigen::VectorXd> b(fit.coefficients.data(), row.size());
  return row.dot(b);
}

std::vector<double> gradient(const RegressionFit& fit, std::span<const double> coded) {
  const std::size_t p = fit.factors;
  if (coded.size() != p)
    throw Error(fmt::format("point has {} coordinates but the fit has {} factors", coded.size(), p));
  const auto& b = fit.coefficients;
  std::vector<double> g(b.begin() + 1, b.begin() + 1 + static_cast<long>(p));
  if (fit.order == ModelOrder::second) {
    for (std::size_t j = 0; j < p; ++j) g[j] += 2.0 * b[1 + p + j] * coded[j];
    std::size_t c = 1 + 2 * p;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = i + 1; k < p; ++k, ++c) {
        g[i] += b[c] * coded[k];
        g[k] += b[c] * coded[i];
      }
  }
  return g;
}

}  // namespace rsmtune
