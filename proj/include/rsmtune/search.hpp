#pragma once

// Search primitives: the path of steepest descent of a first-order surface
// and the canonical analysis of a second-order surface.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "rsmtune/doe.hpp"
#include "rsmtune/regress.hpp"

namespace rsmtune {

struct DescentStep {
  double t = 0.0;  // signed step length, negative when descending
  double s = 0.0;  // |b*|
  std::vector<double> coded;
  Settings decoded;
};

// t = -1, -2, ..., -steps
std::vector<double> default_descent_schedule(std::size_t steps = 10);

// X_h = (t / |b*|) b* for every t, decoded with each factor's kind rules.
//
// `held` is either empty or aligned with `factors`; a factor with a held
// value still contributes to the direction and its norm, but decodes to the
// held value. Throws Error on a flat (zero-gradient) surface.
std::vector<DescentStep> steepest_path(const RegressionFit& fit,
                                       std::span<const FactorSpec> factors,
                                       std::span<const double> t_values,
                                       std::span<const std::optional<double>> held = {});

struct SymmetricEigen {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // column i belongs to values[i]
  int sweeps = 0;
};

// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
// 1e-12 * |A|_F.
SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& a);

enum class SurfaceShape { minimum, maximum, saddle, degenerate };

std::string_view to_string(SurfaceShape shape);

// B: quadratic coefficients on the diagonal, half the interaction
// coefficients off it.
Eigen::MatrixXd quadratic_matrix(const RegressionFit& fit);

struct StationaryAnalysis {
  Eigen::MatrixXd b_matrix;
  Eigen::VectorXd b_star;
  Eigen::VectorXd eigenvalues;  // ascending
  SurfaceShape shape = SurfaceShape::degenerate;
  // Absent when B is singular.
  std::optional<std::vector<double>> x_o_coded;
  Settings x_o_decoded;
  std::optional<double> predicted_response;
  // x_o lies outside the factorial cube [-1, 1]^p.
  bool out_of_region = false;
};

// X_o = -B^-1 b* / 2, classified by the signs of B's eigenvalues with a
// degeneracy threshold of 1e-8 * max(|eigenvalue|, |b*_i|).
StationaryAnalysis stationary_point(const RegressionFit& fit,
                                    std::span<const FactorSpec> factors);

}  // namespace rsmtune
