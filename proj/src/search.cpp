#include "rsmtune/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "rsmtune/error.hpp"

namespace rsmtune {

std::vector<double> default_descent_schedule(std::size_t steps) {
  std::vector<double> t(steps);
  for (std::size_t i = 0; i < steps; ++i) t[i] = -static_cast<double>(i + 1);
  return t;
}

std::vector<DescentStep> steepest_path(const RegressionFit& fit,
                                       std::span<const FactorSpec> factors,
                                       std::span<const double> t_values,
                                       std::span<const std::optional<double>> held) {
  if (fit.order != ModelOrder::first)
    throw Error("steepest_path needs a first-order fit");
  if (fit.factors != factors.size())
    throw Error(fmt::format("fit has {} factors but {} specs were given", fit.factors,
                            factors.size()));
  if (!held.empty() && held.size() != factors.size())
    throw Error("held values must be empty or aligned with the factors");

  const std::vector<double> b = fit.linear();
  const double s = std::sqrt(std::inner_product(b.begin(), b.end(), b.begin(), 0.0));
  if (!(s > 0.0)) throw Error("flat surface: every linear coefficient is zero, no descent direction");

  std::vector<DescentStep> steps;
  steps.reserve(t_values.size());
  for (double t : t_values) {
    DescentStep step{t, s, std::vector<double>(b.size()), {}};
    for (std::size_t j = 0; j < b.size(); ++j) {
      step.coded[j] = t / s * b[j];
      const bool is_held = !held.empty() && held[j].has_value();
      step.decoded.push_back(
          {factors[j].name, is_held ? *held[j] : decode(factors[j], step.coded[j])});
    }
    steps.push_back(std::move(step));
  }
  return steps;
}

SymmetricEigen jacobi_eigen(const Eigen::MatrixXd& input) {
  if (input.rows() != input.cols()) throw Error("jacobi_eigen needs a square matrix");
  const Eigen::Index n = input.rows();
  Eigen::MatrixXd a = (input + input.transpose()) / 2.0;
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  const double target = 1e-12 * a.norm();

  auto off_norm = [&] {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) sum += a(i, j) * a(i, j);
    return std::sqrt(sum);
  };

  int sweeps = 0;
  while (off_norm() > target && sweeps < 100) {
    ++sweeps;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::hypot(theta, 1.0));
        const double c = 1.0 / std::hypot(t, 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  SymmetricEigen out{Eigen::VectorXd(n), Eigen::MatrixXd(n, n), sweeps};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

std::string_view to_string(SurfaceShape shape) {
  switch (shape) {
    case SurfaceShape::minimum: return "minimum";
    case SurfaceShape::maximum: return "maximum";
    case SurfaceShape::saddle: return "saddle";
    case SurfaceShape::degenerate: return "degenerate";
  }
  return "?";
}

Eigen::MatrixXd quadratic_matrix(const RegressionFit& fit) {
  if (fit.order != ModelOrder::second) throw Error("B is only defined for a second-order fit");
  const auto p = static_cast<Eigen::Index>(fit.factors);
  const auto& b = fit.coefficients;
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index j = 0; j < p; ++j) m(j, j) = b[static_cast<std::size_t>(1 + p + j)];
  auto c = static_cast<std::size_t>(1 + 2 * p);
  for (Eigen::Index i = 0; i < p; ++i)
    for (Eigen::Index k = i + 1; k < p; ++k, ++c) {
      m(i, k) = b[c] / 2.0;
      m(k, i) = b[c] / 2.0;
    }
  return m;
}

StationaryAnalysis stationary_point(const RegressionFit& fit,
                                    std::span<const FactorSpec> factors) {
  if (fit.order != ModelOrder::second)
    throw Error("stationary_point needs a second-order fit");
  if (fit.factors != factors.size())
    throw Error(fmt::format("fit has {} factors but {} specs were given", fit.factors,
                            factors.size()));

  StationaryAnalysis out;
  out.b_matrix = quadratic_matrix(fit);
  const std::vector<double> linear = fit.linear();
  out.b_star = Eigen::Map<const Eigen::VectorXd>(linear.data(),
                                                 static_cast<Eigen::Index>(linear.size()));
  out.eigenvalues = jacobi_eigen(out.b_matrix).values;

  const double largest = out.eigenvalues.size() ? out.eigenvalues.cwiseAbs().maxCoeff() : 0.0;
  const double scale = std::max(largest, out.b_star.size() ? out.b_star.cwiseAbs().maxCoeff() : 0.0);
  const double tau = 1e-8 * scale;
  const bool singular = largest == 0.0 || (out.eigenvalues.array().abs() <= tau).any();
  if (singular) {
    out.shape = SurfaceShape::degenerate;
    return out;
  }
  if ((out.eigenvalues.array() > tau).all()) {
    out.shape = SurfaceShape::minimum;
  } else if ((out.eigenvalues.array() < -tau).all()) {
    out.shape = SurfaceShape::maximum;
  } else {
    out.shape = SurfaceShape::saddle;
  }

  const Eigen::FullPivLU<Eigen::MatrixXd> lu(out.b_matrix);
  const Eigen::VectorXd rhs = -0.5 * out.b_star;
  Eigen::VectorXd x = lu.solve(rhs);
  x += lu.solve(rhs - out.b_matrix * x);  // one refinement step

  std::vector<double> coded(x.data(), x.data() + x.size());
  for (std::size_t j = 0; j < coded.size(); ++j) {
    out.x_o_decoded.push_back({factors[j].name, decode(factors[j], coded[j])});
    if (std::abs(coded[j]) > 1.0) out.out_of_region = true;
  }
  out.predicted_response = predict(fit, coded);
  out.x_o_coded = std::move(coded);
  return out;
}

}  // namespace rsmtune
