#pragma once

// Closed-form boundary potential on the unit disk with a centered circular inclusion.
//
// With lambda = 1 + rho on |x| < R and 1 elsewhere, and flux f(theta) = sum_n f_n cos(n theta),
//
//   u(1, theta) = sum_{n>0} (alpha - R^{2n}) / (alpha + R^{2n}) * f_n / n * cos(n theta),
//   alpha = 1 + 2 / rho.
//
// The ratio is evaluated as (1 - beta R^{2n}) / (1 + beta R^{2n}) with beta = rho / (rho + 2) = 1/alpha,
// which is the same quantity but stays finite at rho = 0 (no inclusion).

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "pbsm/errors.hpp"

namespace pbsm::oracle {

inline constexpr int kMaxSeriesTerms = 64;

struct CenteredInclusionProblem {
  double contrast = 0.0;          // rho > -1
  double inclusion_radius = 0.0;  // R in [0, 1]
  std::vector<double> flux_coeffs;  // flux_coeffs[n-1] = f_n

  void validate() const {
    if (!(contrast > -1.0)) throw InvalidArgument("contrast must exceed -1");
    if (!(inclusion_radius >= 0.0 && inclusion_radius <= 1.0)) {
      throw InvalidArgument("inclusion radius must lie in [0, 1]");
    }
    if (flux_coeffs.size() > static_cast<std::size_t>(kMaxSeriesTerms)) {
      throw InvalidArgument("flux series longer than the truncation index");
    }
  }
};

/// Damping factor of mode n: (alpha - R^{2n}) / (alpha + R^{2n}).
inline double mode_factor(double contrast, double inclusion_radius, int n) {
  const double beta = contrast / (contrast + 2.0);
  const double r2n = std::pow(inclusion_radius, 2 * n);
  return (1.0 - beta * r2n) / (1.0 + beta * r2n);
}

inline double exact_boundary_series(const CenteredInclusionProblem& problem, double theta) {
  problem.validate();
  double u = 0.0;
  for (std::size_t i = 0; i < problem.flux_coeffs.size(); ++i) {
    const double fn = problem.flux_coeffs[i];
    if (fn == 0.0) continue;
    const int n = static_cast<int>(i) + 1;
    u += mode_factor(problem.contrast, problem.inclusion_radius, n) * fn / n * std::cos(n * theta);
  }
  return u;
}

/// Single-mode specialization for f = cos(4 theta).
inline double exact_boundary_cos4(double contrast, double inclusion_radius, double theta) {
  if (!(contrast > -1.0)) throw InvalidArgument("contrast must exceed -1");
  if (!(inclusion_radius >= 0.0 && inclusion_radius <= 1.0)) throw InvalidArgument("inclusion radius must lie in [0, 1]");
  const double beta = contrast / (contrast + 2.0);
  const double r8 = std::pow(inclusion_radius, 8);
  return 0.25 * (1.0 - beta * r8) / (1.0 + beta * r8) * std::cos(4.0 * theta);
}

/// Trapezoid-rule cosine projection f_n = (1/pi) int_0^{2pi} f cos(n theta) d theta, n = 1..count,
/// from samples f(2 pi j / M), j = 0..M-1.
inline std::vector<double> cosine_coefficients(std::span<const double> samples, int count) {
  const auto m = samples.size();
  if (count < 1) throw InvalidArgument("coefficient count must be positive");
  if (m < 4 * static_cast<std::size_t>(count)) throw InvalidArgument("need at least 4N samples");
  std::vector<double> coeffs(static_cast<std::size_t>(count), 0.0);
  for (int n = 1; n <= count; ++n) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
      sum += samples[j] * std::cos(n * theta);
    }
    coeffs[n - 1] = 2.0 * sum / static_cast<double>(m);
  }
  return coeffs;
}

}  // namespace pbsm::oracle
