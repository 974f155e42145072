#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "pbsm/surrogate.hpp"

using namespace pbsm;

namespace {

Dissimilarity<1> abs_diff() {
  return [](const Point<1>& a, const Point<1>& b) { return std::abs(a[0] - b[0]); };
}

// Synthetic forward map: smooth observations and F values, no PDE involved.
ForwardSampler<1> toy_forward() {
  return [](const Point<1>& t) {
    ForwardSample s;
    s.observations = {std::sin(t[0]), std::cos(0.5 * t[0]), t[0] * t[0]};
    s.functional = 1.0 + 0.1 * t[0];
    return s;
  };
}

SurrogateStore<1> toy_store(int level) {
  return preprocess(build_design_dyadic_1d(0.0, 10.0, level), models::conductivity(), toy_forward());
}

}  // namespace

TEST(Design, Dyadic) {
  const auto d2 = build_design_dyadic_1d(0.0, 10.0, 2);
  ASSERT_EQ(d2.size(), 5u);
  const double expected[] = {0.0, 2.5, 5.0, 7.5, 10.0};
  for (int i = 0; i < 5; ++i) EXPECT_EQ(d2.points[i][0], expected[i]);

  const auto d3 = build_design_dyadic_1d(0.0, 1.0, 3);
  ASSERT_EQ(d3.size(), 9u);
  EXPECT_EQ(d3.points[1][0], 0.125);
  EXPECT_EQ(d3.points[8][0], 1.0);

  const auto d1 = build_design_dyadic_1d(0.0, 10.0, 1);
  ASSERT_EQ(d1.size(), 3u);
  EXPECT_EQ(d1.points[1][0], 5.0);
  EXPECT_THROW(build_design_dyadic_1d(0.0, 10.0, 0), InvalidArgument);
}

TEST(Design, RequiredLevel) {
  EXPECT_EQ(required_level(0.5), 1);
  EXPECT_EQ(required_level(0.2), 2);
  EXPECT_EQ(required_level(0.1), 4);
  EXPECT_THROW(required_level(0.0), InvalidArgument);
  EXPECT_THROW(required_level(1.0), InvalidArgument);
}

TEST(Design, LatticeSinglePoint) {
  for (const auto& d : {build_design_triangular_2d(5.0, 0.25, 9.5), build_design_grid_2d(5.0, 0.25, 10.0)}) {
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d.points[0], (Point<2>{0.0, 0.0}));
  }
}

TEST(Design, LatticeSizes) {
  // regression values of this generator
  // square grids with spacing (5 - r) / 2^j give 197, 797, 3209, 12853 points
  EXPECT_EQ(build_design_grid_2d(5.0, 0.25, 4.75 / 8).size(), 197u);
  EXPECT_EQ(build_design_grid_2d(5.0, 0.25, 4.75 / 16).size(), 797u);
  EXPECT_EQ(build_design_grid_2d(5.0, 0.25, 4.75 / 32).size(), 3209u);
  EXPECT_EQ(build_design_grid_2d(5.0, 0.25, 4.75 / 64).size(), 12853u);
}

TEST(Design, LatticeScaling) {
  const double n1 = static_cast<double>(build_design_triangular_2d(5.0, 0.25, 0.4).size());
  const double n2 = static_cast<double>(build_design_triangular_2d(5.0, 0.25, 0.2).size());
  EXPECT_NEAR(n2 / n1, 4.0, 0.4);
  const auto tri = build_design_triangular_2d(5.0, 0.25, 0.3);
  for (const auto& p : tri.points) EXPECT_LE(std::hypot(p[0], p[1]), 4.75 + 1e-12);
  EXPECT_NO_THROW(validate(tri, ParameterDomain::disk(4.75)));
}

TEST(Design, GridRotationSymmetry) {
  auto grid = build_design_grid_2d(5.0, 0.25, 0.37);
  auto rotated = grid.points;
  for (auto& p : rotated) p = {-p[1], p[0]};
  std::sort(grid.points.begin(), grid.points.end());
  std::sort(rotated.begin(), rotated.end());
  ASSERT_EQ(grid.points.size(), rotated.size());
  for (std::size_t i = 0; i < rotated.size(); ++i) {
    EXPECT_NEAR(grid.points[i][0], rotated[i][0], 1e-12);
    EXPECT_NEAR(grid.points[i][1], rotated[i][1], 1e-12);
  }
}

TEST(Design, ValidationRejectsDuplicatesAndOutside) {
  Design<1> d{{{1.0}, {2.0}, {1.0}}, "custom"};
  EXPECT_THROW(validate(d, ParameterDomain::interval(0.0, 5.0)), InvalidArgument);
  Design<1> outside{{{1.0}, {6.0}}, "custom"};
  EXPECT_THROW(validate(outside, ParameterDomain::interval(0.0, 5.0)), ParameterOutsideDomain);
  EXPECT_THROW(validate(Design<1>{}, ParameterDomain::interval(0.0, 5.0)), EmptyDesign);
}

TEST(SymmetricDifference, ClosedForm) {
  EXPECT_EQ(symmetric_difference_area({0.0, 0.0}, {0.0, 0.0}, 1.0), 0.0);
  EXPECT_NEAR(symmetric_difference_area({0.0, 0.0}, {2.5, 0.0}, 1.0), 2.0 * std::numbers::pi, 1e-14);
  EXPECT_NEAR(symmetric_difference_area({0.0, 0.0}, {2.0, 0.0}, 1.0), 2.0 * std::numbers::pi, 1e-14);
  // d = r: each lens half is a 120-degree sector minus a triangle
  const double expected = 2.0 * std::numbers::pi - 2.0 * (2.0 * std::numbers::pi / 3.0 - std::sqrt(3.0) / 2.0);
  EXPECT_NEAR(symmetric_difference_area({0.0, 0.0}, {0.6, 0.8}, 1.0), expected, 1e-13);
  EXPECT_NEAR(expected, 3.8264, 1e-4);
}

TEST(SymmetricDifference, MonteCarlo) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> box(-1.0, 2.5);
  const Vec2 c2{1.5, 0.0};
  const int samples = 1000000;
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec2 p{box(rng), box(rng) - 0.75};
    const bool in1 = norm(p) < 1.0;
    const bool in2 = distance(p, c2) < 1.0;
    hits += (in1 != in2) ? 1 : 0;
  }
  const double estimate = 3.5 * 3.5 * hits / samples;
  EXPECT_NEAR(symmetric_difference_area({0.0, 0.0}, c2, 1.0), estimate, 0.02);
}

TEST(Models, DissimilarityAxioms) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto cond = models::conductivity();
  const auto rad = models::radius(6.0);
  const auto anom = models::anomaly(6.0, 0.25, 5.0);
  for (int i = 0; i < 200; ++i) {
    const Point<1> a{10.0 * u(rng)}, b{10.0 * u(rng)};
    EXPECT_EQ(cond.G(a, a), 0.0);
    EXPECT_EQ(cond.G(a, b), cond.G(b, a));
    const Point<1> ra{u(rng)}, rb{u(rng)};
    EXPECT_EQ(rad.G(ra, ra), 0.0);
    EXPECT_EQ(rad.G(ra, rb), rad.G(rb, ra));
    const Point<2> ca{3.0 * u(rng), -2.0 * u(rng)}, cb{-1.0 * u(rng), 2.0 * u(rng)};
    EXPECT_EQ(anom.G(ca, ca), 0.0);
    EXPECT_NEAR(anom.G(ca, cb), anom.G(cb, ca), 1e-12);
  }
  double previous = std::numeric_limits<double>::infinity();
  // G ~ rho (4 r d)^{1/4} for small d
  for (double d : {1e-1, 1e-2, 1e-4, 1e-6, 1e-9, 1e-12}) {
    const double g = anom.G({1.0, 1.0}, {1.0 + d, 1.0});
    EXPECT_LT(g, previous);
    previous = g;
  }
  EXPECT_LT(previous, 0.01);
  EXPECT_NEAR(rad.C, std::pow(2.0 * std::numbers::pi, 0.25) * 6.0, 1e-14);
  EXPECT_EQ(anom.domain.radius, 4.75);
}

TEST(Neighbors, TieBreakTowardLowerIndex) {
  const Design<1> d{{{1.0}, {2.0}, {3.0}, {4.0}}, "custom"};
  const auto first = nearest_neighbors<1>({2.5}, d, abs_diff(), 3);
  EXPECT_EQ(first.indices, (std::vector<std::size_t>{1, 2, 0}));
  EXPECT_EQ(first.g_values, (std::vector<double>{0.5, 0.5, 1.5}));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(nearest_neighbors<1>({2.5}, d, abs_diff(), 3).indices, first.indices);
}

TEST(Neighbors, DesignPointFirstAndFullSort) {
  const Design<1> d{{{1.0}, {2.0}, {3.0}, {4.0}}, "custom"};
  const auto at = nearest_neighbors<1>({3.0}, d, abs_diff(), 2);
  EXPECT_EQ(at.indices[0], 2u);
  EXPECT_EQ(at.g_values[0], 0.0);
  const auto all = nearest_neighbors<1>({0.0}, d, abs_diff(), 4);
  EXPECT_EQ(all.indices, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_THROW(nearest_neighbors<1>({0.0}, d, abs_diff(), 5), InvalidArgument);
  EXPECT_THROW(nearest_neighbors<1>({0.0}, Design<1>{}, abs_diff(), 1), EmptyDesign);
}

TEST(Coefficients, Formula) {
  const NeighborSet equal{{0, 1}, {0.5, 0.5}};
  const std::vector<double> f{2.0, 2.0};
  const auto half = coefficients(equal, f);
  EXPECT_DOUBLE_EQ(half[0], 0.5);
  EXPECT_DOUBLE_EQ(half[1], 0.5);

  const NeighborSet ns{{3, 7}, {1.0, 3.0}};
  const std::vector<double> ones{1.0, 1.0};
  const auto a = coefficients(ns, ones);
  EXPECT_NEAR(a[0], 0.75, 1e-15);
  EXPECT_NEAR(a[1], 0.25, 1e-15);

  const NeighborSet snapped{{4, 5}, {5e-9, 0.3}};
  EXPECT_EQ(coefficients(snapped, ones), (std::vector<double>{1.0, 0.0}));
}

TEST(Surrogate, PartitionOfUnity) {
  const auto store = toy_store(4);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const auto combo = surrogate_combination<1>({u(rng)}, store, 2, kDefaultSnapThreshold);
    double sum = 0.0;
    for (double a : combo.alpha) {
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
      sum += a;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Surrogate, DesignPointsReturnStoredRows) {
  const auto store = toy_store(3);
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto s = evaluate_surrogate(store.design.points[i], store);
    const auto row = store.row(i);
    EXPECT_TRUE(std::equal(s.begin(), s.end(), row.begin(), row.end()));
    EXPECT_EQ(error_bound(store.design.points[i], store, 2).residual, 0.0);
  }
}

TEST(Surrogate, MidpointWithEqualFAveragesRows) {
  Design<1> d{{{2.0}, {4.0}}, "custom"};
  ForwardSampler<1> flat = [](const Point<1>& t) {
    return ForwardSample{{t[0], 2.0 * t[0]}, 3.0, std::nullopt};
  };
  const auto store = preprocess(d, models::conductivity(), flat);
  const auto s = evaluate_surrogate<1>({3.0}, store, 2, kDefaultSnapThreshold);
  EXPECT_DOUBLE_EQ(s[0], 3.0);
  EXPECT_DOUBLE_EQ(s[1], 6.0);
}

TEST(Surrogate, ContinuityAtDesignPoints) {
  const auto store = toy_store(4);
  for (std::size_t j = 1; j + 1 < store.size(); ++j) {
    const double tj = store.design.points[j][0];
    double previous = 0.0;
    double previous_gap = std::numeric_limits<double>::infinity();
    for (double d : {1e-2, 1e-3, 1e-4, 1e-5, 1e-6}) {
      const auto combo = surrogate_combination<1>({tj + d}, store, 2, kDefaultSnapThreshold);
      ASSERT_EQ(combo.neighbors.indices[0], j);
      EXPECT_GT(combo.alpha[0], previous);
      previous = combo.alpha[0];
      const auto s = evaluate_surrogate<1>({tj + d}, store, 2, kDefaultSnapThreshold);
      double gap = 0.0;
      for (std::size_t c = 0; c < s.size(); ++c) gap = std::max(gap, std::abs(s[c] - store.row(j)[c]));
      EXPECT_LT(gap, previous_gap);
      previous_gap = gap;
    }
    EXPECT_GT(previous, 0.999);
  }
}

TEST(Surrogate, SingleDesignPointIsConstant) {
  Design<1> d{{{5.0}}, "custom"};
  PreprocessOptions options;
  options.k_default = 1;
  const auto store = preprocess(d, models::conductivity(), toy_forward(), options);
  const auto at = evaluate_surrogate<1>({0.3}, store);
  const auto row = store.row(0);
  EXPECT_TRUE(std::equal(at.begin(), at.end(), row.begin(), row.end()));
  EXPECT_EQ(evaluate_surrogate<1>({9.1}, store), at);
}

TEST(Surrogate, OutsideDomainRejected) {
  const auto store = toy_store(2);
  EXPECT_THROW(evaluate_surrogate<1>({-0.5}, store), ParameterOutsideDomain);
  EXPECT_THROW(evaluate_surrogate<1>({10.5}, store), ParameterOutsideDomain);
}

TEST(Surrogate, PermutationInvariance) {
  const auto store = toy_store(4);
  auto shuffled_design = store.design;
  std::mt19937_64 rng(13);
  std::shuffle(shuffled_design.points.begin(), shuffled_design.points.end(), rng);
  const auto shuffled = preprocess(shuffled_design, models::conductivity(), toy_forward());
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    const Point<1> t{u(rng)};
    const auto a = evaluate_surrogate(t, store);
    const auto b = evaluate_surrogate(t, shuffled);
    for (std::size_t c = 0; c < a.size(); ++c) EXPECT_NEAR(a[c], b[c], 1e-14);
  }
}

TEST(Preprocess, DeterministicAndParallel) {
  const auto design = build_design_dyadic_1d(0.0, 10.0, 5);
  PreprocessOptions one_thread;
  one_thread.threads = 1;
  PreprocessOptions four_threads;
  four_threads.threads = 4;
  const auto serial = preprocess(design, models::conductivity(), toy_forward(), one_thread);
  const auto parallel = preprocess(design, models::conductivity(), toy_forward(), four_threads);
  EXPECT_EQ(serial.observations, parallel.observations);
  EXPECT_EQ(serial.functional_values, parallel.functional_values);
  EXPECT_EQ(serial.size(), 33u);
  EXPECT_EQ(serial.m, 3u);
}

TEST(Preprocess, FailureNamesDesignPoint) {
  const auto design = build_design_dyadic_1d(0.0, 10.0, 2);
  ForwardSampler<1> failing = [](const Point<1>& t) -> ForwardSample {
    if (t[0] == 7.5) throw SolverFailure("no convergence");
    return {{1.0}, 1.0, std::nullopt};
  };
  try {
    preprocess(design, models::conductivity(), failing);
    FAIL() << "expected SolverFailure";
  } catch (const SolverFailure& e) {
    EXPECT_NE(std::string(e.what()).find("design point 3 (7.5)"), std::string::npos) << e.what();
  }
}

TEST(ErrorBound, HarmonicMean) {
  Design<1> d{{{2.0}, {4.0}}, "custom"};
  ForwardSampler<1> constant_f = [](const Point<1>&) { return ForwardSample{{0.0}, 2.0, std::nullopt}; };
  auto model = models::conductivity();
  model.C = 1.5;
  model.coercivity_lb = 0.5;
  const auto store = preprocess(d, model, constant_f);
  // both neighbors at G = 1 with F = 2
  const auto eb = error_bound<1>({3.0}, store, 2);
  EXPECT_DOUBLE_EQ(eb.residual, 1.5 * 2.0);
  EXPECT_DOUBLE_EQ(eb.solution, 6.0);
}

TEST(ErrorBound, NonincreasingUnderRefinement) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<SurrogateStore<1>> stores;
  ForwardSampler<1> unit_f = [](const Point<1>&) { return ForwardSample{{0.0}, 1.0, std::nullopt}; };
  for (int l = 2; l <= 7; ++l) {
    stores.push_back(preprocess(build_design_dyadic_1d(0.0, 10.0, l), models::conductivity(), unit_f));
  }
  for (int i = 0; i < 200; ++i) {
    const Point<1> t{u(rng)};
    double previous = std::numeric_limits<double>::infinity();
    for (const auto& s : stores) {
      const double e = error_bound(t, s, 2).residual;
      EXPECT_LE(e, previous * (1.0 + 1e-12));
      previous = e;
    }
  }
}

TEST(VerifyDesign, DyadicSweep) {
  const auto design = build_design_dyadic_1d(0.0, 10.0, 4);
  const auto samples = grid_samples(0.0, 10.0, 10000);
  const auto report = verify_design_approximation<1>(design, samples, abs_diff(), 2.0, 1.0, 2, 0.625);
  EXPECT_EQ(report.max_kth_g, 0.625);
  EXPECT_TRUE(report.passes);
  EXPECT_DOUBLE_EQ(report.implied_bound, 1.25);

  const Design<1> single{{{3.0}}, "custom"};
  const auto one = verify_design_approximation<1>(single, samples, abs_diff(), 1.0, 1.0, 1, 7.0);
  EXPECT_EQ(one.max_kth_g, 7.0);

  const auto coarse = grid_samples(0.0, 10.0, 1000);
  const Design<1> same{coarse, "custom"};
  EXPECT_EQ(verify_design_approximation<1>(same, coarse, abs_diff(), 1.0, 1.0, 1, 0.0).max_kth_g, 0.0);
}
