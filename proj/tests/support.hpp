#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rsmtune/campaign.hpp"
#include "rsmtune/doe.hpp"
#include "rsmtune/regress.hpp"

namespace testing {

using namespace rsmtune;

// Two-sided Student t tail by composite Simpson integration of the density
// from |t| to a far cutoff.
inline double simpson_t_pvalue(double t, double dof) {
  const double norm = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) /
                      std::sqrt(dof * M_PI);
  auto density = [&](double x) { return norm * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  // substitute x = |t| + u / (1 - u) to map [|t|, inf) onto [0, 1)
  const double a = std::abs(t);
  const int n = 200000;
  const double h = 1.0 / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = std::min(i * h, 1.0 - 1e-12);
    const double x = a + u / (1 - u);
    const double f = density(x) / ((1 - u) * (1 - u));
    const double w = (i == 0 || i == n) ? 1 : (i % 2 ? 4 : 2);
    sum += w * f;
  }
  return 2.0 * sum * h / 3.0;
}

// The seven hyperparameters of the insurance network, initial domains.
inline std::vector<FactorSpec> cann_factors() {
  auto integer = [](std::string name, double low, double high) {
    FactorSpec f;
    f.name = std::move(name);
    f.kind = FactorKind::integer;
    f.low = low;
    f.high = high;
    return f;
  };
  FactorSpec op;
  op.name = "Op";
  op.kind = FactorKind::cyclic;
  op.low = 0;
  op.high = 6;
  op.modulus = 7;
  op.oob = OutOfBounds::wrap;
  return {op,
          integer("N1", 10, 30),
          integer("N2", 5, 25),
          integer("N3", 5, 15),
          integer("Ep", 100, 900),
          integer("Bh", 5000, 15000),
          integer("Lr", 2, 4)};
}

inline std::vector<std::string> cann_names() {
  return {"Op", "N1", "N2", "N3", "Ep", "Bh", "Lr"};
}

// Published first-order screening estimates: intercept then the seven slopes.
inline const std::vector<double>& published_screening_coefficients() {
  static const std::vector<double> b{46.0791, -21.8703, -0.5261, -11.0132,
                                     -0.9574, -16.005,  9.1987,  -7.3396};
  return b;
}

// First-order fit carrying exactly the published coefficients.
inline RegressionFit published_screening_fit() {
  RegressionFit fit;
  fit.order = ModelOrder::first;
  fit.factors = 7;
  const auto names = cann_names();
  fit.term_names = term_names(names, ModelOrder::first);
  fit.coefficients = published_screening_coefficients();
  return fit;
}

// Responses for the 132-run screening design (2^7 corners, 4 centres) whose
// OLS fit reproduces the published table: y = Xb + e with e orthogonal to X
// and |e|^2 = sigma^2 * 124, sigma = 2.8777 * sqrt(128).
inline std::vector<double> published_screening_responses(const Design& design) {
  const auto& b = published_screening_coefficients();
  const std::size_t n = design.size();
  const double sigma = 2.8777 * std::sqrt(128.0);
  std::vector<double> e(n, 0.0);
  // interaction columns are orthogonal to the intercept and main effects of a
  // full factorial and vanish at the centre
  for (std::size_t i = 0; i < n; ++i) {
    const auto& x = design.points[i].coded;
    e[i] = x[0] * x[1] + 0.5 * x[2] * x[3] - 0.25 * x[4] * x[5] * x[6];
  }
  double norm2 = 0.0;
  for (double v : e) norm2 += v * v;
  const double scale = sigma * std::sqrt(124.0 / norm2);
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = b[0];
    for (std::size_t j = 0; j < 7; ++j) v += b[j + 1] * design.points[i].coded[j];
    y[i] = v + scale * e[i];
  }
  return y;
}

inline Design screening_design(std::size_t k, std::size_t centers) {
  Design d = full_factorial(k);
  for (std::size_t i = 0; i < centers; ++i)
    d.points.push_back({std::vector<double>(k, 0.0), PointRole::center});
  return d;
}

// Quadratic c + b'x + x'Bx with minimiser x_star and minimum f_star.
struct KnownQuadratic {
  Eigen::MatrixXd b_matrix;
  Eigen::VectorXd b;
  double c = 0.0;
  Eigen::VectorXd x_star;
  double f_star = 0.0;
};

inline KnownQuadratic seven_factor_bowl(double f_star = 0.25) {
  const int p = 7;
  KnownQuadratic q;
  q.b_matrix = Eigen::MatrixXd::Identity(p, p);
  for (int i = 0; i < p; ++i)
    for (int k = i + 1; k < p; ++k) {
      const double v = 0.04 * std::sin(1.0 + i * 7 + k);
      q.b_matrix(i, k) = v;
      q.b_matrix(k, i) = v;
    }
  q.x_star.resize(p);
  q.x_star << 0.9, -1.1, 1.3, -0.8, 1.0, -1.2, 0.85;
  q.b = -2.0 * q.b_matrix * q.x_star;
  q.f_star = f_star;
  q.c = f_star + q.x_star.dot(q.b_matrix * q.x_star);
  return q;
}

inline CampaignConfig bowl_config(const KnownQuadratic& q, double noise, std::uint64_t seed) {
  CampaignConfig c;
  const std::vector<std::pair<double, double>> ranges{
      {0.001, 0.1}, {0.5, 0.99}, {0.0, 0.5}, {32, 256}, {0.0, 0.01}, {0, 1000}, {0.5, 5.0}};
  const std::vector<std::string> names{"lr", "momentum", "dropout", "width",
                                       "decay", "warmup", "clip"};
  for (std::size_t j = 0; j < names.size(); ++j) {
    FactorSpec f;
    f.name = names[j];
    f.low = ranges[j].first;
    f.high = ranges[j].second;
    c.factors.push_back(f);
  }
  QuadraticSurface s;
  s.b_matrix = q.b_matrix;
  s.b = q.b;
  s.c = q.c;
  s.noise_sigma = noise;
  s.seed = seed;
  c.objective = s;
  c.phases.n_0_1 = 4;
  c.phases.n_0_2 = 4;
  c.phases.replicates = 2;
  c.seed = seed;
  return c;
}

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "rsmtune-test-XXXXXX").string();
    path = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string str(const std::string& leaf = {}) const {
    return leaf.empty() ? path.string() : (path / leaf).string();
  }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Drops the last CSV column (the timestamp) from every line.
inline std::string without_last_column(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    const std::size_t end = csv.find('\n', start);
    const std::string line = csv.substr(start, end - start);
    out += line.substr(0, line.rfind(',')) + "\n";
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace testing
