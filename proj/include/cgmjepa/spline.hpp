#pragma once

// Cubic smoothing splines in Reinsch form.
//
// fit() minimizes  sum_i (y_i - f(x_i))^2 + lambda * integral f''(t)^2 dt
// over natural cubic splines with knots at the data abscissae. With
// h_i = x_{i+1} - x_i, Q the n x (n-2) second-difference matrix and R the
// (n-2) x (n-2) tridiagonal Gram matrix, the interior second derivatives
// gamma solve the pentadiagonal SPD system
//   (R + lambda Q^T Q) gamma = Q^T y,
// and the fitted knot values are g = y - lambda Q gamma.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "cgmjepa/common.hpp"
#include "cgmjepa/data.hpp"

namespace cgmjepa {

inline constexpr double kVenousLambdaInitial = 0.35;
inline constexpr double kVenousLambdaValidation = 0.4;
inline constexpr double kGlucodensityLambda = 1.0;

class SplineFit {
 public:
  SplineFit() = default;

  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& knot_values() const { return g_; }
  const std::vector<double>& second_derivatives() const { return gamma_; }
  double lambda() const { return lambda_; }

  // Polynomial coefficients of interval i in powers of (t - x_i).
  std::array<double, 4> coefficients(std::size_t i) const { return coef_[i]; }
  std::size_t intervals() const { return coef_.size(); }

  // Derivative order 0..3; outside [x_0, x_{n-1}] the boundary cubic is extended.
  double eval(double t, int order = 0) const {
    std::size_t i = interval_of(t);
    const auto& c = coef_[i];
    const double d = t - x_[i];
    switch (order) {
      case 0: return c[0] + d * (c[1] + d * (c[2] + d * c[3]));
      case 1: return c[1] + d * (2.0 * c[2] + 3.0 * d * c[3]);
      case 2: return 2.0 * c[2] + 6.0 * d * c[3];
      case 3: return 6.0 * c[3];
      default: throw Error("spline eval: order must be 0..3");
    }
  }

  // integral of f''^2 over [x_0, x_{n-1}] (f'' is piecewise linear).
  double roughness() const {
    double s = 0;
    for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
      const double h = x_[i + 1] - x_[i];
      const double a = gamma_[i], b = gamma_[i + 1];
      s += h / 3.0 * (a * a + a * b + b * b);
    }
    return s;
  }

  double objective(std::span<const double> y) const {
    double rss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) rss += (y[i] - g_[i]) * (y[i] - g_[i]);
    return rss + lambda_ * roughness();
  }

 private:
  friend SplineFit fit_smoothing_spline(std::span<const double>, std::span<const double>, double);

  std::size_t interval_of(double t) const {
    const std::size_t m = coef_.size();
    if (t <= x_.front()) return 0;
    if (t >= x_.back()) return m - 1;
    auto it = std::upper_bound(x_.begin(), x_.end(), t);
    return std::min<std::size_t>(static_cast<std::size_t>(it - x_.begin()) - 1, m - 1);
  }

  void build_coefficients() {
    coef_.resize(x_.size() - 1);
    for (std::size_t i = 0; i + 1 < x_.size(); ++i) {
      const double h = x_[i + 1] - x_[i];
      const double a = gamma_[i], b = gamma_[i + 1];
      coef_[i] = {g_[i], (g_[i + 1] - g_[i]) / h - h * (2.0 * a + b) / 6.0, a / 2.0,
                  (b - a) / (6.0 * h)};
    }
  }

  std::vector<double> x_, g_, gamma_;
  std::vector<std::array<double, 4>> coef_;
  double lambda_ = 0.0;
};

namespace detail {

// In-place LDL^T solve of a symmetric positive definite band matrix with
// half-bandwidth 2. diag[i] = A(i,i), off1[i] = A(i,i+1), off2[i] = A(i,i+2).
inline void solve_pentadiagonal_spd(std::vector<double> diag, std::vector<double> off1,
                                    std::vector<double> off2, std::vector<double>& rhs) {
  const std::size_t m = diag.size();
  // After factorization: diag = D, off1 = L(i+1,i), off2 = L(i+2,i).
  for (std::size_t i = 0; i < m; ++i) {
    if (i >= 1) diag[i] -= off1[i - 1] * off1[i - 1] * diag[i - 1];
    if (i >= 2) diag[i] -= off2[i - 2] * off2[i - 2] * diag[i - 2];
    if (!(diag[i] > 0)) throw Error("smoothing spline: system not positive definite");
    if (i + 1 < m) {
      double v = off1[i];
      if (i >= 1) v -= off2[i - 1] * off1[i - 1] * diag[i - 1];
      off1[i] = v / diag[i];
    }
    if (i + 2 < m) off2[i] = off2[i] / diag[i];
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (i >= 1) rhs[i] -= off1[i - 1] * rhs[i - 1];
    if (i >= 2) rhs[i] -= off2[i - 2] * rhs[i - 2];
  }
  for (std::size_t i = 0; i < m; ++i) rhs[i] /= diag[i];
  for (std::size_t k = m; k-- > 0;) {
    if (k + 1 < m) rhs[k] -= off1[k] * rhs[k + 1];
    if (k + 2 < m) rhs[k] -= off2[k] * rhs[k + 2];
  }
}

}  // namespace detail

inline SplineFit fit_smoothing_spline(std::span<const double> x, std::span<const double> y,
                                      double lambda) {
  const std::size_t n = x.size();
  if (n != y.size()) throw Error("spline fit: x and y lengths differ");
  if (n < 2) throw Error("spline fit: at least 2 points required");
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw Error("spline fit: lambda must be >= 0");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw Error("spline fit: non-finite input");
    if (i > 0 && !(x[i] > x[i - 1])) {
      if (x[i] == x[i - 1]) throw Error("spline fit: duplicate abscissae");
      throw Error("spline fit: abscissae must be increasing");
    }
  }

  SplineFit f;
  f.x_.assign(x.begin(), x.end());
  f.lambda_ = lambda;
  f.gamma_.assign(n, 0.0);
  f.g_.assign(y.begin(), y.end());

  if (n > 2) {
    const std::size_t m = n - 2;
    std::vector<double> h(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i) h[i] = x[i + 1] - x[i];
    // Column j of Q (interior knot j+1) has entries at rows j, j+1, j+2.
    std::vector<double> qa(m), qb(m), qc(m);
    for (std::size_t j = 0; j < m; ++j) {
      qa[j] = 1.0 / h[j];
      qb[j] = -1.0 / h[j] - 1.0 / h[j + 1];
      qc[j] = 1.0 / h[j + 1];
    }
    std::vector<double> diag(m), off1(m, 0.0), off2(m, 0.0), rhs(m);
    for (std::size_t j = 0; j < m; ++j) {
      diag[j] = (h[j] + h[j + 1]) / 3.0 + lambda * (qa[j] * qa[j] + qb[j] * qb[j] + qc[j] * qc[j]);
      if (j + 1 < m) off1[j] = h[j + 1] / 6.0 + lambda * (qb[j] * qa[j + 1] + qc[j] * qb[j + 1]);
      if (j + 2 < m) off2[j] = lambda * (qc[j] * qa[j + 2]);
      rhs[j] = qa[j] * y[j] + qb[j] * y[j + 1] + qc[j] * y[j + 2];
    }
    detail::solve_pentadiagonal_spd(std::move(diag), std::move(off1), std::move(off2), rhs);
    for (std::size_t j = 0; j < m; ++j) f.gamma_[j + 1] = rhs[j];
    if (lambda > 0) {
      for (std::size_t j = 0; j < m; ++j) {
        f.g_[j] -= lambda * qa[j] * rhs[j];
        f.g_[j + 1] -= lambda * qb[j] * rhs[j];
        f.g_[j + 2] -= lambda * qc[j] * rhs[j];
      }
    }
  }
  f.build_coefficients();
  return f;
}

inline SplineFit fit_smoothing_spline(const std::vector<double>& x, const std::vector<double>& y,
                                      double lambda) {
  return fit_smoothing_spline(std::span<const double>(x), std::span<const double>(y), lambda);
}

// Fits on the observed slots (grid minutes) and evaluates at all 39 slots.
// The mask is kept for provenance.
inline AlignedTrace smooth_trace(const AlignedTrace& trace, double lambda) {
  std::vector<double> xs, ys;
  for (int i = 0; i < kGridSlots; ++i) {
    if (trace.mask[i]) {
      xs.push_back(grid_time(i));
      ys.push_back(trace.values[i]);
    }
  }
  if (xs.size() < 2)
    throw ValidationError("smooth_trace: " + trace.subject_id + "/" +
                          std::string(to_string(trace.stream)) + " has fewer than 2 observations");
  const SplineFit f = fit_smoothing_spline(xs, ys, lambda);
  AlignedTrace out = trace;
  for (int i = 0; i < kGridSlots; ++i) out.values[i] = f.eval(grid_time(i));
  out.smoothed = true;
  return out;
}

}  // namespace cgmjepa
