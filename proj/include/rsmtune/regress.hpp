#pragma once

// First- and second-order response-surface regression by ordinary least
// squares, with per-coefficient t inference.
//
// Term order is fixed: intercept, linear x1..xp, squares x1^2..xp^2, then the
// interactions x1x2, x1x3, ..., x(p-1)xp in lexicographic pair order.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmtune/doe.hpp"

namespace rsmtune {

std::size_t term_count(std::size_t factors, ModelOrder order);

// Term labels built from factor names ("Intercept", "Op", "Op^2", "Op*N1").
std::vector<std::string> term_names(std::span<const std::string> factor_names,
                                    ModelOrder order);
// Same, with factors called x1..xp.
std::vector<std::string> term_names(std::size_t factors, ModelOrder order);

Eigen::RowVectorXd model_row(std::span<const double> coded, ModelOrder order);
Eigen::MatrixXd model_matrix(const Design& design, ModelOrder order);

// Indices of columns lying in the span of the columns before them.
std::vector<std::size_t> collinear_columns(const Eigen::MatrixXd& x);

struct RegressionFit {
  ModelOrder order = ModelOrder::first;
  std::size_t factors = 0;
  std::vector<std::string> term_names;
  std::vector<double> coefficients;
  // Inference columns; empty for a saturated coefficients-only fit.
  std::vector<double> standard_errors;
  std::vector<double> t_values;
  std::vector<double> p_values;
  double residual_variance = 0.0;
  long dof = 0;

  bool has_inference() const { return !standard_errors.empty(); }
  double intercept() const { return coefficients.at(0); }
  // b*: the linear coefficients, intercept excluded.
  std::vector<double> linear() const;
};

enum class FitMode { inference, coefficients_only };

// Least squares via the normal equations (LDL'), switching to a Householder
// QR of X when X'X is worse conditioned than 1e8.
//
// Throws RankDeficientError when X lacks full column rank, and Error when the
// model is saturated (dof <= 0) unless mode is coefficients_only.
RegressionFit ols_fit(const Eigen::MatrixXd& x, std::span<const double> y, ModelOrder order,
                      std::vector<std::string> names = {},
                      FitMode mode = FitMode::inference);

RegressionFit fit_design(const Design& design, std::span<const double> y, ModelOrder order,
                         std::span<const std::string> factor_names = {},
                         FitMode mode = FitMode::inference);

// Two-sided tail probability of Student's t with `dof` degrees of freedom.
double t_pvalue(double t, long dof);

double predict(const RegressionFit& fit, std::span<const double> coded);
std::vector<double> gradient(const RegressionFit& fit, std::span<const double> coded);

}  // namespace rsmtune
