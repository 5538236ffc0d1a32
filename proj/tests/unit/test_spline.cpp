#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "cgmjepa/spline.hpp"

using namespace cgmjepa;

namespace {

// Dense oracle: the penalized knot values solve (I + lambda K) g = y with
// K = Q R^{-1} Q^T built from the textbook matrices.
std::vector<double> dense_smoother(const std::vector<double>& x, const std::vector<double>& y, double lambda) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n - 2), R = Eigen::MatrixXd::Zero(n - 2, n - 2);
  std::vector<double> h(n - 1);
  for (int i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];
  for (int j = 0; j < n - 2; ++j) {
    Q(j, j) = 1 / h[j];
    Q(j + 1, j) = -1 / h[j] - 1 / h[j + 1];
    Q(j + 2, j) = 1 / h[j + 1];
    R(j, j) = (h[j] + h[j + 1]) / 3;
    if (j + 1 < n - 2) R(j, j + 1) = R(j + 1, j) = h[j + 1] / 6;
  }
  const Eigen::MatrixXd K = Q * R.inverse() * Q.transpose();
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) + lambda * K;
  const Eigen::VectorXd g = A.fullPivLu().solve(Eigen::Map<const Eigen::VectorXd>(y.data(), n));
  return {g.data(), g.data() + n};
}

// Natural cubic interpolant through (x, y) evaluated at t, via the standard
// tridiagonal system for the knot second derivatives.
double natural_interpolant(const std::vector<double>& x, const std::vector<double>& y, double t) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  A(0, 0) = A(n - 1, n - 1) = 1;
  for (int i = 1; i + 1 < n; ++i) {
    const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
    A(i, i - 1) = h0 / 6;
    A(i, i) = (h0 + h1) / 3;
    A(i, i + 1) = h1 / 6;
    b(i) = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
  }
  const Eigen::VectorXd M = A.lu().solve(b);
  int i = 0;
  while (i + 2 < n && t > x[i + 1]) ++i;
  const double h = x[i + 1] - x[i], a = (x[i + 1] - t) / h, c = (t - x[i]) / h;
  return a * y[i] + c * y[i + 1] + ((a * a * a - a) * M(i) + (c * c * c - c) * M(i + 1)) * h * h / 6;
}

std::vector<double> venous_x() { return {-10, 0, 15, 30, 60, 90, 120, 150, 180}; }

std::vector<double> noisy_y(const std::vector<double>& x, unsigned seed) {
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0, 6);
  std::vector<double> y;
  for (double t : x) y.push_back(95 + 70 * std::exp(-std::pow((t - 50) / 40, 2)) + nd(gen));
  return y;
}

}  // namespace

TEST(Spline, ZeroLambdaInterpolatesKnots) {
  const auto x = venous_x();
  const auto y = noisy_y(x, 1);
  const auto f = fit_smoothing_spline(x, y, 0.0);
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(f.eval(x[i]) - y[i]));
  EXPECT_LT(worst, 1e-8);
}

TEST(Spline, ZeroLambdaMatchesNaturalInterpolantBetweenKnots) {
  const auto x = venous_x();
  const auto y = noisy_y(x, 2);
  const auto f = fit_smoothing_spline(x, y, 0.0);
  for (double t = -10; t <= 180; t += 2.5) EXPECT_NEAR(f.eval(t), natural_interpolant(x, y, t), 1e-9) << t;
}

TEST(Spline, HugeLambdaConvergesToLeastSquaresLine) {
  auto x = venous_x();
  const auto y = noisy_y(x, 3);
  for (double& t : x) t /= 60.0;  // hours
  const auto f = fit_smoothing_spline(x, y, 1e12);
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  EXPECT_NEAR(f.eval(0.0, 1), slope, 1e-6);
  EXPECT_NEAR(f.eval(0.0), intercept, 1e-6);
  EXPECT_NEAR(f.eval(2.0), intercept + 2 * slope, 1e-6);
}

TEST(Spline, DistanceToLineShrinksAsOneOverLambda) {
  const auto x = venous_x();
  const auto y = noisy_y(x, 3);
  const auto line = fit_smoothing_spline(x, y, 1e17);
  const double d12 = std::abs(fit_smoothing_spline(x, y, 1e12).eval(0.0) - line.eval(0.0));
  const double d13 = std::abs(fit_smoothing_spline(x, y, 1e13).eval(0.0) - line.eval(0.0));
  EXPECT_NEAR(d12 / d13, 10.0, 0.05);
}

TEST(Spline, NaturalBoundaryConditions) {
  const auto x = venous_x();
  for (double lam : {0.0, 0.35, 10.0, 1e4}) {
    const auto f = fit_smoothing_spline(x, noisy_y(x, 4), lam);
    EXPECT_NEAR(f.eval(x.front(), 2), 0.0, 1e-9) << lam;
    EXPECT_NEAR(f.eval(x.back(), 2), 0.0, 1e-9) << lam;
  }
}

TEST(Spline, MatchesDenseOracleOnIrregularKnots) {
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> gap(0.5, 20.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + trial % 15;
    std::vector<double> x{0.0};
    for (int i = 1; i < n; ++i) x.push_back(x.back() + gap(gen));
    const auto y = noisy_y(x, 100 + trial);
    for (double lam : {0.01, 0.4, 25.0, 3000.0}) {
      const auto f = fit_smoothing_spline(x, y, lam);
      const auto g = dense_smoother(x, y, lam);
      for (int i = 0; i < n; ++i) EXPECT_NEAR(f.knot_values()[i], g[i], 1e-8 * (1 + std::abs(g[i])));
    }
  }
}

TEST(Spline, FitMinimizesPenalizedObjective) {
  const auto x = venous_x();
  const auto y = noisy_y(x, 6);
  const auto f = fit_smoothing_spline(x, y, 5.0);
  const double best = f.objective(y);
  std::mt19937 gen(6);
  std::normal_distribution<double> nd(0, 0.5);
  for (int k = 0; k < 30; ++k) {
    std::vector<double> yp = f.knot_values();
    for (double& v : yp) v += nd(gen);
    // The interpolant of perturbed knot values is another natural spline.
    const auto g = fit_smoothing_spline(x, yp, 0.0);
    double rss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) rss += (y[i] - yp[i]) * (y[i] - yp[i]);
    EXPECT_GE(rss + 5.0 * g.roughness(), best - 1e-9);
  }
}

TEST(Spline, TwoPointsGiveLine) {
  const auto f = fit_smoothing_spline(std::vector<double>{0, 10}, std::vector<double>{1, 21}, 3.0);
  EXPECT_NEAR(f.eval(5), 11, 1e-12);
  EXPECT_NEAR(f.eval(20), 41, 1e-12);
}

TEST(Spline, DerivativesConsistentWithFiniteDifferences) {
  const auto x = venous_x();
  const auto f = fit_smoothing_spline(x, noisy_y(x, 7), 0.35);
  const double h = 1e-4;
  for (double t : {5.0, 37.0, 101.0, 170.0}) {
    EXPECT_NEAR(f.eval(t, 1), (f.eval(t + h) - f.eval(t - h)) / (2 * h), 1e-5);
    EXPECT_NEAR(f.eval(t, 2), (f.eval(t + h, 1) - f.eval(t - h, 1)) / (2 * h), 1e-5);
  }
}

TEST(Spline, RejectsBadInput) {
  EXPECT_THROW(fit_smoothing_spline(std::vector<double>{1}, std::vector<double>{1}, 1), Error);
  EXPECT_THROW(fit_smoothing_spline(std::vector<double>{1, 1, 2}, std::vector<double>{1, 2, 3}, 1), Error);
  EXPECT_THROW(fit_smoothing_spline(std::vector<double>{1, 2, 3}, std::vector<double>{1, NAN, 3}, 1), Error);
  EXPECT_THROW(fit_smoothing_spline(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}, -1), Error);
}

TEST(SmoothTrace, FillsSentinelsAndKeepsMask) {
  GlucoseSeries s{"A", Stream::ctru_venous, {}};
  const auto x = venous_x();
  const auto y = noisy_y(x, 8);
  for (std::size_t i = 0; i < x.size(); ++i) s.samples.push_back({x[i], y[i]});
  const auto raw = align_to_grid(s).trace;
  const auto sm = smooth_trace(raw, kVenousLambdaInitial);
  EXPECT_TRUE(sm.smoothed);
  EXPECT_EQ(sm.mask, raw.mask);
  for (double v : sm.values) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(v, 0);
  }
  GlucoseSeries one{"B", Stream::ctru_venous, {{0, 100}}};
  EXPECT_THROW(smooth_trace(align_to_grid(one).trace, 0.4), ValidationError);
}
