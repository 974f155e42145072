#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "pbsm/fem.hpp"
#include "pbsm/oracle.hpp"

using namespace pbsm;

namespace {

std::shared_ptr<const Mesh> disk(double h, int refinements = 0) {
  Mesh mesh = generate_disk_mesh(1.0, h);
  for (int i = 0; i < refinements; ++i) mesh = refine_uniform(mesh);
  return std::make_shared<const Mesh>(std::move(mesh));
}

ConductivityField centered(double rho, double R) { return {1.0, {{{0.0, 0.0}, R, rho}}}; }

}  // namespace

TEST(Fem, ReferenceTriangleStiffness) {
  Mesh tri;
  tri.vertices = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
  tri.triangles = {{0, 1, 2}};
  const auto k = local_stiffness(tri, 0);
  const double expected[3][3] = {{1.0, -0.5, -0.5}, {-0.5, 0.5, 0.0}, {-0.5, 0.0, 0.5}};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(k[i][j], expected[i][j], 1e-15);
  }
}

TEST(Fem, ConstantsInKernel) {
  const auto mesh = disk(0.1);
  for (const auto& field : {ConductivityField{}, centered(3.2, 0.85), centered(0.0, 0.5)}) {
    const SparseMatrix k = assemble_stiffness(*mesh, field);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(k.cols());
    EXPECT_LT((k * ones).lpNorm<Eigen::Infinity>(), 1e-12);
    EXPECT_LT((SparseMatrix(k.transpose()) - k).norm(), 1e-14 * k.norm());
  }
}

TEST(Fem, StiffnessLinearInConductivity) {
  const auto mesh = disk(0.2);
  const SparseMatrix k1 = assemble_stiffness(*mesh, ConductivityField{});
  const SparseMatrix k2 = assemble_stiffness(*mesh, ConductivityField{2.0, {}});
  EXPECT_EQ((k2 - 2.0 * k1).norm(), 0.0);
}

TEST(Fem, NeumannLoad) {
  const auto mesh = disk(0.05);
  const Eigen::VectorXd zero = assemble_neumann_load(*mesh, [](const Vec2&) { return 0.0; });
  EXPECT_EQ(zero.lpNorm<Eigen::Infinity>(), 0.0);

  const Eigen::VectorXd cos4 = assemble_neumann_load(*mesh, cosine_flux(4));
  EXPECT_LT(std::abs(cos4.sum()), 1e-8);
  for (Eigen::Index i = 0; i < cos4.size(); ++i) {
    if (std::abs(norm(mesh->vertices[i]) - 1.0) > 1e-9) {
      EXPECT_EQ(cos4[i], 0.0);
    }
  }

  EXPECT_THROW(assemble_neumann_load(*mesh, [](const Vec2&) { return 1.0; }), IncompatibleFlux);
}

TEST(Fem, ZeroLoadGivesZeroSolution) {
  const auto mesh = disk(0.1);
  const SparseMatrix k = assemble_stiffness(*mesh, ConductivityField{});
  const FieldSolution sol = solve_neumann(k, Eigen::VectorXd::Zero(k.rows()), mesh);
  EXPECT_EQ(sol.nodal_values.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(sol.grad_l2, 0.0);
  EXPECT_EQ(sol.grad_l4, 0.0);
}

TEST(Fem, RejectsLoadNotOrthogonalToConstants) {
  const auto mesh = disk(0.2);
  const SparseMatrix k = assemble_stiffness(*mesh, ConductivityField{});
  EXPECT_THROW(solve_neumann(k, Eigen::VectorXd::Ones(k.rows()), mesh), IncompatibleFlux);
}

// u = r cos(theta) = x solves the Laplace-Neumann problem with flux cos(theta).
TEST(Fem, HarmonicExtensionOfCosine) {
  double previous = std::numeric_limits<double>::infinity();
  for (int level = 0; level < 3; ++level) {
    const auto mesh = disk(0.2, level);
    const FieldSolution sol = solve_forward(mesh, ConductivityField{}, cosine_flux(1));
    double err = 0.0;
    for (const auto& [a, b] : mesh->boundary_edges) {
      err = std::max(err, std::abs(sol.nodal_values[a] - mesh->vertices[a][0]));
    }
    EXPECT_LT(err, previous);
    previous = err;
  }
  EXPECT_LT(previous, 5e-3);
}

TEST(Fem, BoundaryMeanIsZero) {
  const auto mesh = disk(0.05);
  const FieldSolution sol = solve_forward(mesh, centered(3.2, 0.85), cosine_flux(4));
  const double mean = boundary_mass(*mesh).dot(sol.nodal_values);
  EXPECT_LT(std::abs(mean), 1e-8 * sol.nodal_values.lpNorm<Eigen::Infinity>() * 2.0 * std::numbers::pi);
}

TEST(Fem, EnergyIdentityAndOrthogonality) {
  const auto mesh = disk(0.05);
  const auto field = centered(3.2, 0.85);
  const SparseMatrix k = assemble_stiffness(*mesh, field);
  const Eigen::VectorXd b = assemble_neumann_load(*mesh, cosine_flux(4));
  const FieldSolution sol = solve_neumann(k, b, mesh);
  const Eigen::VectorXd& x = sol.nodal_values;

  const auto lambda = triangle_conductivities(*mesh, field);
  const auto grads = triangle_gradients(*mesh, x);
  double energy = 0.0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    energy += triangle_area(*mesh, t) * lambda[t] * (grads[t][0] * grads[t][0] + grads[t][1] * grads[t][1]);
  }
  EXPECT_NEAR(x.dot(k * x), energy, 1e-10 * energy);

  const Eigen::VectorXd residual = k * x - b;
  EXPECT_LE(residual.norm(), 1e-10 * b.norm());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.size());
  for (Eigen::Index i = 0; i < v.size(); i += 7) v[i] = std::sin(0.3 * static_cast<double>(i));
  EXPECT_LE(std::abs(v.dot(residual)), 1e-10 * b.norm() * v.norm());
}

TEST(Fem, GradientNormsMatchDirectQuadrature) {
  const auto mesh = disk(0.1);
  const FieldSolution sol = solve_forward(mesh, centered(3.2, 0.85), cosine_flux(4));
  EXPECT_NEAR(sol.grad_l2, gradient_norm(*mesh, sol.nodal_values, 2), 1e-12 * sol.grad_l2);
  EXPECT_NEAR(sol.grad_l4, gradient_norm(*mesh, sol.nodal_values, 4), 1e-12 * sol.grad_l4);
  EXPECT_GT(sol.grad_l2, 0.0);
}

TEST(Fem, LinearInFlux) {
  const auto mesh = disk(0.1);
  const auto field = centered(3.2, 0.85);
  const FieldSolution u = solve_forward(mesh, field, cosine_flux(4));
  const FieldSolution u2 = solve_forward(mesh, field, [](const Vec2& x) { return 2.0 * std::cos(4.0 * std::atan2(x[1], x[0])); });
  EXPECT_EQ((u2.nodal_values - 2.0 * u.nodal_values).lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(Fem, PointEvaluation) {
  const auto mesh = disk(0.1);
  const FieldSolution sol = solve_forward(mesh, centered(3.2, 0.85), cosine_flux(4));
  const std::vector<Vec2> at_vertex{mesh->vertices[17]};
  EXPECT_NEAR(evaluate_at_points(sol, at_vertex)[0], sol.nodal_values[17], 1e-15);

  const auto& tri = mesh->triangles[40];
  const std::vector<Vec2> at_centroid{triangle_centroid(*mesh, 40)};
  const double mean = (sol.nodal_values[tri[0]] + sol.nodal_values[tri[1]] + sol.nodal_values[tri[2]]) / 3.0;
  EXPECT_NEAR(evaluate_at_points(sol, at_centroid)[0], mean, 1e-14);

  const std::vector<Vec2> outside{{1.1, 0.0}};
  EXPECT_THROW(evaluate_at_points(sol, outside), PointOutsideDomain);

  // a circle point between two boundary vertices lies outside the polygon and snaps to the chord
  const double half_step = std::numbers::pi / static_cast<double>(mesh->boundary_edges.size());
  const std::vector<Vec2> on_arc{{std::cos(half_step), std::sin(half_step)}};
  const auto [a, b] = mesh->boundary_edges[0];
  EXPECT_NEAR(evaluate_at_points(sol, on_arc)[0], 0.5 * (sol.nodal_values[a] + sol.nodal_values[b]), 1e-12);
}

TEST(Fem, MatchesOracleAtObservationPoints) {
  const auto mesh = disk(0.03);
  const FieldSolution sol = solve_forward(mesh, centered(3.2, 0.85), cosine_flux(4));
  const auto points = circle_points(10, 1.0);
  const auto values = evaluate_at_points(sol, points);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double theta = std::atan2(points[i][1], points[i][0]);
    const double exact = oracle::exact_boundary_cos4(3.2, 0.85, theta);
    EXPECT_LT(std::abs(values[i] - exact) / std::abs(exact), 0.02) << "point " << i;
  }
}

TEST(Fem, FieldValidation) {
  EXPECT_THROW(validate(ConductivityField{0.0, {}}, 1.0), InvalidArgument);
  EXPECT_THROW(validate(centered(-1.5, 0.5), 1.0), InvalidArgument);
  EXPECT_THROW(validate(ConductivityField{1.0, {{{0.9, 0.0}, 0.2, 1.0}}}, 1.0), InvalidArgument);
  EXPECT_NO_THROW(validate(centered(6.0, 1.0), 1.0));
}
