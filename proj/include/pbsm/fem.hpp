#pragma once

// P1 finite elements for the pure-Neumann conductivity problem
//
//   div(lambda grad u) = 0 in B,   lambda du/dn = f on dB,   int_dB u ds = 0.

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pbsm/errors.hpp"
#include "pbsm/mesh.hpp"

namespace pbsm {

using SparseMatrix = Eigen::SparseMatrix<double>;
using FluxFunction = std::function<double(const Vec2&)>;

struct Inclusion {
  Vec2 center{0.0, 0.0};
  double radius = 0.0;
  double contrast = 0.0;  // rho: conductivity is background + rho inside the disk
};

/// Piecewise-constant conductivity: a background value plus disk-shaped inclusions.
struct ConductivityField {
  double background = 1.0;
  std::vector<Inclusion> inclusions;

  double value_at(const Vec2& x) const {
    double value = background;
    for (const auto& inc : inclusions) {
      if (distance(x, inc.center) < inc.radius) value += inc.contrast;
    }
    return value;
  }

  /// Lower bound on lambda over the domain (ellipticity constant).
  double lower_bound() const {
    double lb = background;
    for (const auto& inc : inclusions) lb += std::min(0.0, inc.contrast);
    return lb;
  }
};

inline void validate(const ConductivityField& field, double domain_radius) {
  if (!(field.background > 0.0)) throw InvalidArgument("background conductivity must be positive");
  for (const auto& inc : field.inclusions) {
    if (!(inc.radius >= 0.0)) throw InvalidArgument("inclusion radius must be non-negative");
    if (!(inc.contrast > -field.background)) throw InvalidArgument("inclusion contrast violates ellipticity");
    if (norm(inc.center) + inc.radius > domain_radius * (1.0 + 1e-12)) {
      throw InvalidArgument("inclusion leaves the domain");
    }
  }
  if (!(field.lower_bound() > 0.0)) throw InvalidArgument("conductivity is not uniformly elliptic");
}

struct FieldSolution {
  std::shared_ptr<const Mesh> mesh;
  Eigen::VectorXd nodal_values;
  double grad_l2 = 0.0;
  double grad_l4 = 0.0;
};

/// Gradients of the three P1 basis functions of triangle t (constant over the triangle).
inline std::array<Vec2, 3> basis_gradients(const Mesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const auto& a = mesh.vertices[tri[0]];
  const auto& b = mesh.vertices[tri[1]];
  const auto& c = mesh.vertices[tri[2]];
  const double twice_area = 2.0 * signed_area(a, b, c);
  return {{{(b[1] - c[1]) / twice_area, (c[0] - b[0]) / twice_area},
           {(c[1] - a[1]) / twice_area, (a[0] - c[0]) / twice_area},
           {(a[1] - b[1]) / twice_area, (b[0] - a[0]) / twice_area}}};
}

/// Element stiffness matrix of triangle t for unit conductivity.
inline std::array<std::array<double, 3>, 3> local_stiffness(const Mesh& mesh, std::size_t t) {
  const auto grads = basis_gradients(mesh, t);
  const double area = triangle_area(mesh, t);
  std::array<std::array<double, 3>, 3> local{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      local[i][j] = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
    }
  }
  return local;
}

/// Conductivity sampled at each triangle centroid.
inline std::vector<double> triangle_conductivities(const Mesh& mesh, const ConductivityField& field) {
  std::vector<double> lambda(mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) lambda[t] = field.value_at(triangle_centroid(mesh, t));
  return lambda;
}

inline SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const double> lambda_per_triangle) {
  if (lambda_per_triangle.size() != mesh.num_triangles()) {
    throw InvalidArgument("one conductivity value per triangle required");
  }
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto local = local_stiffness(mesh, t);
    const auto& tri = mesh.triangles[t];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        triplets.emplace_back(tri[i], tri[j], lambda_per_triangle[t] * local[i][j]);
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  SparseMatrix stiffness(n, n);
  stiffness.setFromTriplets(triplets.begin(), triplets.end());
  return stiffness;
}

inline SparseMatrix assemble_stiffness(const Mesh& mesh, const ConductivityField& field) {
  validate(field, mesh.radius);
  const auto lambda = triangle_conductivities(mesh, field);
  return assemble_stiffness(mesh, std::span<const double>(lambda));
}

/// c_i = integral of the hat function phi_i over the boundary (exact for the polygonal boundary).
inline Eigen::VectorXd boundary_mass(const Mesh& mesh) {
  Eigen::VectorXd c = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
  for (const auto& [a, b] : mesh.boundary_edges) {
    const double half = 0.5 * distance(mesh.vertices[a], mesh.vertices[b]);
    c[a] += half;
    c[b] += half;
  }
  return c;
}

/// Load vector L(v) = int_dB v f ds with two-point Gauss quadrature per boundary edge.
/// Throws IncompatibleFlux when the discrete integral of f is not zero relative to int |f|.
inline Eigen::VectorXd assemble_neumann_load(const Mesh& mesh, const FluxFunction& flux) {
  static const double gauss_offset = 0.5 / std::sqrt(3.0);
  Eigen::VectorXd load = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mesh.num_vertices()));
  double integral = 0.0;
  double abs_integral = 0.0;
  for (const auto& [a, b] : mesh.boundary_edges) {
    const auto& pa = mesh.vertices[a];
    const auto& pb = mesh.vertices[b];
    const double len = distance(pa, pb);
    for (double t : {0.5 - gauss_offset, 0.5 + gauss_offset}) {
      const Vec2 x{pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])};
      const double w = 0.5 * len * flux(x);
      load[a] += (1.0 - t) * w;
      load[b] += t * w;
      integral += w;
      abs_integral += std::abs(w);
    }
  }
  if (abs_integral == 0.0) return load;
  if (!(std::abs(integral) < 1e-8 * abs_integral)) {
    throw IncompatibleFlux("boundary flux does not integrate to zero (integral " + std::to_string(integral) + ")");
  }
  return load;
}

/// Per-triangle gradient of a P1 field.
inline std::vector<Vec2> triangle_gradients(const Mesh& mesh, const Eigen::VectorXd& nodal) {
  std::vector<Vec2> grads(mesh.num_triangles());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    const auto basis = basis_gradients(mesh, t);
    const auto& tri = mesh.triangles[t];
    Vec2 g{0.0, 0.0};
    for (int i = 0; i < 3; ++i) {
      g[0] += nodal[tri[i]] * basis[i][0];
      g[1] += nodal[tri[i]] * basis[i][1];
    }
    grads[t] = g;
  }
  return grads;
}

/// ||grad u||_{L^p} computed exactly from the piecewise-constant gradient.
inline double gradient_norm(const Mesh& mesh, const Eigen::VectorXd& nodal, int p) {
  const auto grads = triangle_gradients(mesh, nodal);
  double sum = 0.0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const double g2 = grads[t][0] * grads[t][0] + grads[t][1] * grads[t][1];
    sum += triangle_area(mesh, t) * std::pow(g2, 0.5 * p);
  }
  return std::pow(sum, 1.0 / p);
}

/// Solves K u = b under the constraint int_dB u ds = 0, imposed with one Lagrange multiplier.
inline FieldSolution solve_neumann(const SparseMatrix& stiffness, const Eigen::VectorXd& load,
                                   std::shared_ptr<const Mesh> mesh) {
  const auto n = static_cast<Eigen::Index>(mesh->num_vertices());
  if (stiffness.rows() != n || stiffness.cols() != n || load.size() != n) {
    throw InvalidArgument("system size does not match the mesh");
  }
  const double load_l1 = load.lpNorm<1>();
  if (std::abs(load.sum()) > 1e-8 * load_l1) throw IncompatibleFlux("load vector is not orthogonal to constants");

  FieldSolution sol;
  sol.mesh = mesh;
  if (load_l1 == 0.0) {
    sol.nodal_values = Eigen::VectorXd::Zero(n);
    return sol;
  }

  const Eigen::VectorXd constraint = boundary_mass(*mesh);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(stiffness.nonZeros()) + 2 * mesh->boundary_edges.size());
  for (int k = 0; k < stiffness.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(stiffness, k); it; ++it) triplets.emplace_back(it.row(), it.col(), it.value());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (constraint[i] != 0.0) {
      triplets.emplace_back(n, i, constraint[i]);
      triplets.emplace_back(i, n, constraint[i]);
    }
  }
  SparseMatrix augmented(n + 1, n + 1);
  augmented.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::VectorXd rhs(n + 1);
  rhs.head(n) = load;
  rhs[n] = 0.0;

  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(augmented);
  if (lu.info() != Eigen::Success) throw SolverFailure("sparse LU factorization failed: " + lu.lastErrorMessage());
  const Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite()) throw SolverFailure("sparse LU solve failed");
  sol.nodal_values = x.head(n);
  const double residual = (stiffness * sol.nodal_values - load).norm();
  if (!(residual <= 1e-10 * load.norm())) {
    throw SolverFailure("residual " + std::to_string(residual) + " above tolerance");
  }

  const auto grads = triangle_gradients(*mesh, sol.nodal_values);
  double l2 = 0.0;
  double l4 = 0.0;
  for (std::size_t t = 0; t < grads.size(); ++t) {
    const double g2 = grads[t][0] * grads[t][0] + grads[t][1] * grads[t][1];
    const double area = triangle_area(*mesh, t);
    l2 += area * g2;
    l4 += area * g2 * g2;
  }
  sol.grad_l2 = std::sqrt(l2);
  sol.grad_l4 = std::sqrt(std::sqrt(l4));
  return sol;
}

/// Assemble and solve in one step.
inline FieldSolution solve_forward(std::shared_ptr<const Mesh> mesh, const ConductivityField& field,
                                   const FluxFunction& flux) {
  const SparseMatrix stiffness = assemble_stiffness(*mesh, field);
  const Eigen::VectorXd load = assemble_neumann_load(*mesh, flux);
  return solve_neumann(stiffness, load, std::move(mesh));
}

/// Linear map from nodal values to point values. Point location is done once at construction,
/// so repeated evaluation on many solutions of the same mesh costs O(m).
class PointEvaluator {
 public:
  PointEvaluator(const Mesh& mesh, std::span<const Vec2> points) {
    stencils_.reserve(points.size());
    for (const auto& p : points) stencils_.push_back(locate(mesh, p));
  }

  std::size_t size() const { return stencils_.size(); }

  std::vector<double> apply(const Eigen::VectorXd& nodal) const {
    std::vector<double> out(stencils_.size());
    for (std::size_t i = 0; i < stencils_.size(); ++i) {
      const auto& s = stencils_[i];
      out[i] = s.weight[0] * nodal[s.vertex[0]] + s.weight[1] * nodal[s.vertex[1]] + s.weight[2] * nodal[s.vertex[2]];
    }
    return out;
  }

 private:
  struct Stencil {
    std::array<int, 3> vertex{};
    std::array<double, 3> weight{};
  };

  static Stencil locate(const Mesh& mesh, const Vec2& p) {
    constexpr double inside_tol = 1e-12;
    for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
      const auto& tri = mesh.triangles[t];
      const auto& a = mesh.vertices[tri[0]];
      const auto& b = mesh.vertices[tri[1]];
      const auto& c = mesh.vertices[tri[2]];
      const double area = signed_area(a, b, c);
      const double l0 = signed_area(p, b, c) / area;
      const double l1 = signed_area(a, p, c) / area;
      const double l2 = 1.0 - l0 - l1;
      if (l0 >= -inside_tol && l1 >= -inside_tol && l2 >= -inside_tol) {
        return {tri, {l0, l1, l2}};
      }
    }
    // Points between a boundary chord and the circle belong to the closed disk but not to the
    // polygon; they take the value at the nearest point of the nearest boundary edge.
    if (norm(p) > mesh.radius * (1.0 + 1e-9)) {
      throw PointOutsideDomain("point (" + std::to_string(p[0]) + ", " + std::to_string(p[1]) + ") outside the disk");
    }
    double best = std::numeric_limits<double>::infinity();
    Stencil stencil;
    for (const auto& [ia, ib] : mesh.boundary_edges) {
      const auto& a = mesh.vertices[ia];
      const auto& b = mesh.vertices[ib];
      const Vec2 ab{b[0] - a[0], b[1] - a[1]};
      double t = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1]);
      t = std::clamp(t, 0.0, 1.0);
      const double d = distance(p, {a[0] + t * ab[0], a[1] + t * ab[1]});
      if (d < best) {
        best = d;
        stencil = {{ia, ib, ib}, {1.0 - t, t, 0.0}};
      }
    }
    return stencil;
  }

  std::vector<Stencil> stencils_;
};

inline std::vector<double> evaluate_at_points(const FieldSolution& sol, std::span<const Vec2> points) {
  return PointEvaluator(*sol.mesh, points).apply(sol.nodal_values);
}

/// m equispaced points on the circle of given radius, the first at angle 0.
inline std::vector<Vec2> circle_points(std::size_t m, double radius) {
  std::vector<Vec2> pts(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(m);
    pts[i] = {radius * std::cos(angle), radius * std::sin(angle)};
  }
  return pts;
}

/// f(theta) = cos(n theta), evaluated through the polar angle of x.
inline FluxFunction cosine_flux(int n) {
  return [n](const Vec2& x) { return std::cos(n * std::atan2(x[1], x[0])); };
}

}  // namespace pbsm
