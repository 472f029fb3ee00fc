#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "rsmtune/error.hpp"
#include "rsmtune/regress.hpp"
#include "support.hpp"

using namespace rsmtune;

namespace {

Design square_with_center() {
  Design d = full_factorial(2);
  d.points.push_back({{0, 0}, PointRole::center});
  return d;
}

}  // namespace

TEST_SUITE("regress") {

TEST_CASE("model matrix layout") {
  Design d{2, {{{-1, 1}, PointRole::corner}}};
  const Eigen::MatrixXd x = model_matrix(d, ModelOrder::second);
  REQUIRE(x.cols() == 6);
  Eigen::RowVectorXd want(6);
  want << 1, -1, 1, 1, 1, -1;
  CHECK(x.row(0).isApprox(want));
  CHECK(model_matrix(full_factorial(3), ModelOrder::first).cols() == 4);
  CHECK(term_count(7, ModelOrder::second) == 36);
  const auto names = term_names(std::vector<std::string>{"Op", "N1", "N2"}, ModelOrder::second);
  CHECK(names == std::vector<std::string>{"Intercept", "Op", "N1", "N2", "Op^2", "N1^2", "N2^2",
                                          "Op*N1", "Op*N2", "N1*N2"});
}

TEST_CASE("noiseless first-order recovery") {
  const Design d = square_with_center();
  std::vector<double> y;
  for (const auto& p : d.points) y.push_back(2 + 3 * p.coded[0] - p.coded[1]);
  const RegressionFit fit = fit_design(d, y, ModelOrder::first);
  CHECK(fit.coefficients[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(fit.coefficients[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(fit.coefficients[2] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(fit.residual_variance == doctest::Approx(0.0));
  CHECK(predict(fit, std::vector<double>{0, 0}) == doctest::Approx(2.0));

  const RegressionFit zero = fit_design(d, std::vector<double>(5, 0.0), ModelOrder::first);
  for (double b : zero.coefficients) CHECK(b == 0.0);
}

TEST_CASE("one-dimensional quadratic") {
  Design d{1, {{{-1}}, {{0}}, {{1}}, {{0.5}}}};
  std::vector<double> y;
  for (const auto& p : d.points) y.push_back(1 - 2 * p.coded[0] + p.coded[0] * p.coded[0]);
  const RegressionFit fit = fit_design(d, y, ModelOrder::second);
  CHECK(predict(fit, std::vector<double>{1.0}) == doctest::Approx(0.0).epsilon(1e-12));
  for (std::size_t i = 0; i < d.size(); ++i)
    CHECK(predict(fit, d.points[i].coded) == doctest::Approx(y[i]).epsilon(1e-12));
}

TEST_CASE("random designs: recovery, orthogonality, permutation") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 2 + trial % 4;
    Design d = ccd(CcdSpec{p, 1, 1, 3, std::nullopt, {}});
    for (int extra = 0; extra < 5; ++extra) {
      std::vector<double> x(p);
      for (auto& v : x) v = u(rng);
      d.points.push_back({x, PointRole::corner});
    }
    const std::size_t terms = term_count(p, ModelOrder::second);
    std::vector<double> beta(terms);
    for (auto& b : beta) b = 10 * n01(rng);
    const Eigen::MatrixXd x = model_matrix(d, ModelOrder::second);
    const Eigen::VectorXd truth = Eigen::Map<Eigen::VectorXd>(beta.data(), terms);
    const Eigen::VectorXd exact = x * truth;
    std::vector<double> y(exact.data(), exact.data() + exact.size());
    const RegressionFit fit = ols_fit(x, y, ModelOrder::second);
    const Eigen::VectorXd got = Eigen::Map<const Eigen::VectorXd>(fit.coefficients.data(), terms);
    CHECK((got - truth).norm() / truth.norm() <= 1e-8);

    // noisy responses: residuals orthogonal to the columns
    std::vector<double> noisy = y;
    for (auto& v : noisy) v += n01(rng);
    const RegressionFit nf = ols_fit(x, noisy, ModelOrder::second);
    const Eigen::VectorXd yv = Eigen::Map<Eigen::VectorXd>(noisy.data(), noisy.size());
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(nf.coefficients.data(), terms);
    CHECK((x.transpose() * (yv - x * b)).norm() <= 1e-8 * yv.norm());
    for (double pv : nf.p_values) {
      CHECK(pv >= 0.0);
      CHECK(pv <= 1.0);
    }
    for (std::size_t i = 0; i < terms; ++i)
      if (nf.standard_errors[i] > 0)
        CHECK(nf.t_values[i] == doctest::Approx(nf.coefficients[i] / nf.standard_errors[i]));

    // row permutation
    std::vector<std::size_t> order(d.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    Design shuffled{p, {}};
    std::vector<double> ys;
    for (auto i : order) {
      shuffled.points.push_back(d.points[i]);
      ys.push_back(noisy[i]);
    }
    const RegressionFit pf = fit_design(shuffled, ys, ModelOrder::second);
    for (std::size_t i = 0; i < terms; ++i)
      CHECK(pf.coefficients[i] == doctest::Approx(nf.coefficients[i]).epsilon(1e-9));
  }
}

TEST_CASE("gradient matches central differences") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  const std::size_t p = 4;
  RegressionFit fit;
  fit.order = ModelOrder::second;
  fit.factors = p;
  fit.term_names = term_names(p, ModelOrder::second);
  for (std::size_t i = 0; i < term_count(p, ModelOrder::second); ++i)
    fit.coefficients.push_back(n01(rng));
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(p);
    for (auto& v : x) v = n01(rng);
    const auto g = gradient(fit, x);
    for (std::size_t j = 0; j < p; ++j) {
      auto hi = x, lo = x;
      hi[j] += 1e-5;
      lo[j] -= 1e-5;
      const double fd = (predict(fit, hi) - predict(fit, lo)) / 2e-5;
      CHECK(std::abs(fd - g[j]) <= 1e-6);
    }
  }
}

TEST_CASE("t p-values") {
  CHECK(t_pvalue(0.0, 7) == doctest::Approx(1.0));
  CHECK(t_pvalue(2.0, 10) == doctest::Approx(testing::simpson_t_pvalue(2.0, 10)).epsilon(1e-8));
  CHECK(std::abs(t_pvalue(2.0, 10) - 0.07339) <= 1e-4);
  CHECK(t_pvalue(4.0, 4) == doctest::Approx(testing::simpson_t_pvalue(4.0, 4)).epsilon(1e-8));
  for (double t : {0.3, 1.7, 3.2, 6.0})
    for (long dof : {1L, 3L, 30L, 124L}) {
      CHECK(t_pvalue(t, dof) == t_pvalue(-t, dof));
      CHECK(t_pvalue(t, dof) ==
            doctest::Approx(testing::simpson_t_pvalue(t, static_cast<double>(dof))).epsilon(1e-7));
    }
  CHECK(t_pvalue(INFINITY, 5) == 0.0);
  CHECK(t_pvalue(1e6, 5) < 1e-20);
  CHECK(t_pvalue(1.0, 5) > t_pvalue(1.1, 5));
  CHECK_THROWS_AS(t_pvalue(1.0, 0), Error);
}

TEST_CASE("the published screening table as a fixture") {
  const Design d = testing::screening_design(7, 4);
  REQUIRE(d.size() == 132);
  const auto y = testing::published_screening_responses(d);
  const RegressionFit fit = fit_design(d, y, ModelOrder::first, testing::cann_names());
  const auto& b = testing::published_screening_coefficients();
  for (std::size_t i = 0; i < b.size(); ++i)
    CHECK(fit.coefficients[i] == doctest::Approx(b[i]).epsilon(1e-9));
  CHECK(fit.dof == 124);
  CHECK(fit.standard_errors[0] == doctest::Approx(2.83375).epsilon(1e-5));
  for (std::size_t i = 1; i < 8; ++i)
    CHECK(fit.standard_errors[i] == doctest::Approx(2.8777).epsilon(1e-6));
  const std::vector<double> t{16.26, -7.60, -0.18, -3.83, -0.33, -5.56, 3.20, -2.55};
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(fit.t_values[i] - t[i]) < 0.005 + 1e-9);
  CHECK(fit.p_values[2] == doctest::Approx(0.8552).epsilon(1e-3));
  CHECK(fit.p_values[4] == doctest::Approx(0.7399).epsilon(1e-3));
  CHECK(fit.p_values[3] == doctest::Approx(0.0002).epsilon(0.5));
  CHECK(fit.p_values[6] == doctest::Approx(0.0018).epsilon(0.05));
  CHECK(fit.p_values[7] == doctest::Approx(0.012).epsilon(0.05));
}

TEST_CASE("errors") {
  const Design d = full_factorial(2);
  SUBCASE("saturated fits need coefficients-only mode") {
    Design three{1, {{{-1}}, {{0}}, {{1}}}};
    const std::vector<double> y{1, 0, 1};
    CHECK_THROWS_AS(fit_design(three, y, ModelOrder::second), Error);
    const RegressionFit fit = fit_design(three, y, ModelOrder::second, {}, FitMode::coefficients_only);
    CHECK(!fit.has_inference());
    CHECK(fit.coefficients[2] == doctest::Approx(1.0));
  }
  SUBCASE("rank deficiency names the collinear columns") {
    CHECK_THROWS_WITH_AS(fit_design(d, std::vector<double>{1, 2, 3, 4}, ModelOrder::second),
                         doctest::Contains("x1^2"), RankDeficientError);
  }
  SUBCASE("dimension mismatch") {
    RegressionFit fit = fit_design(square_with_center(), std::vector<double>{1, 2, 3, 4, 5},
                                   ModelOrder::first);
    CHECK_THROWS_AS(predict(fit, std::vector<double>{1, 2, 3}), Error);
    CHECK_THROWS_AS(fit_design(d, std::vector<double>{1, 2}, ModelOrder::first), Error);
  }
}

}  // TEST_SUITE
