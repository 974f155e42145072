#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pbsm/oracle.hpp"

using namespace pbsm;
using namespace pbsm::oracle;

namespace {
const double kPi = std::numbers::pi;
}

TEST(Oracle, ZeroFluxGivesZero) {
  const CenteredInclusionProblem p{3.2, 0.85, std::vector<double>(8, 0.0)};
  for (double theta : {0.0, 0.3, 2.0}) EXPECT_EQ(exact_boundary_series(p, theta), 0.0);
}

TEST(Oracle, Cos4Values) {
  EXPECT_NEAR(exact_boundary_cos4(3.2, 0.85, kPi / 8.0), 0.0, 1e-16);
  // 0.25 (1.625 - 0.85^8) / (1.625 + 0.85^8), evaluated in 30-digit arithmetic
  EXPECT_NEAR(exact_boundary_cos4(3.2, 0.85, 0.0), 0.17819713156842959706, 1e-15);
  EXPECT_NEAR(exact_boundary_cos4(7.0, 0.0, 0.0), 0.25, 1e-16);
  EXPECT_NEAR(exact_boundary_cos4(0.0, 0.6, 0.0), 0.25, 1e-16);
}

TEST(Oracle, InfiniteContrastLimit) {
  // alpha -> 1: coefficient (1 - R^8) / (1 + R^8) / 4
  EXPECT_NEAR(exact_boundary_cos4(1e12, 0.85, 0.0), 0.14293023418359139666, 1e-11);
}

TEST(Oracle, SeriesCollapsesToSingleMode) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> rho(-0.9, 20.0);
  std::uniform_real_distribution<double> radius(0.01, 0.99);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  CenteredInclusionProblem p{0.0, 0.0, {0.0, 0.0, 0.0, 1.0}};
  for (int i = 0; i < 1000; ++i) {
    p.contrast = rho(rng);
    p.inclusion_radius = radius(rng);
    const double theta = angle(rng);
    EXPECT_NEAR(exact_boundary_series(p, theta), exact_boundary_cos4(p.contrast, p.inclusion_radius, theta), 1e-15);
  }
}

TEST(Oracle, AntisymmetryUnderEighthTurn) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
  for (int i = 0; i < 100; ++i) {
    const double theta = angle(rng);
    EXPECT_NEAR(exact_boundary_cos4(3.2, 0.85, theta + kPi / 4.0), -exact_boundary_cos4(3.2, 0.85, theta), 1e-15);
  }
}

TEST(Oracle, RejectsInvalidProblems) {
  EXPECT_THROW(exact_boundary_cos4(-1.0, 0.5, 0.0), InvalidArgument);
  EXPECT_THROW(exact_boundary_cos4(1.0, 1.5, 0.0), InvalidArgument);
  CenteredInclusionProblem too_long{1.0, 0.5, std::vector<double>(kMaxSeriesTerms + 1, 0.0)};
  EXPECT_THROW(exact_boundary_series(too_long, 0.0), InvalidArgument);
}

TEST(Oracle, CosineCoefficients) {
  std::vector<double> samples(64);
  for (std::size_t j = 0; j < samples.size(); ++j) samples[j] = std::cos(4.0 * 2.0 * kPi * j / 64.0);
  const auto c = cosine_coefficients(samples, 8);
  for (int n = 1; n <= 8; ++n) EXPECT_NEAR(c[n - 1], n == 4 ? 1.0 : 0.0, 1e-12);

  const auto zero = cosine_coefficients(std::vector<double>(64, 0.0), 8);
  for (double v : zero) EXPECT_EQ(v, 0.0);

  for (std::size_t j = 0; j < samples.size(); ++j) {
    const double t = 2.0 * kPi * j / 64.0;
    samples[j] = 3.0 * std::cos(t) + 0.5 * std::cos(2.0 * t);
  }
  const auto mixed = cosine_coefficients(samples, 8);
  EXPECT_NEAR(mixed[0], 3.0, 1e-12);
  EXPECT_NEAR(mixed[1], 0.5, 1e-12);
  for (int n = 3; n <= 8; ++n) EXPECT_NEAR(mixed[n - 1], 0.0, 1e-12);

  EXPECT_THROW(cosine_coefficients(std::vector<double>(31, 0.0), 8), InvalidArgument);
}
