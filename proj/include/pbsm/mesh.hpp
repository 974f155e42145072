#pragma once

// Conforming P1 triangulations of a disk centered at the origin.

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "pbsm/errors.hpp"

namespace pbsm {

using Vec2 = std::array<double, 2>;

inline double norm(const Vec2& p) { return std::hypot(p[0], p[1]); }

inline double distance(const Vec2& a, const Vec2& b) { return std::hypot(a[0] - b[0], a[1] - b[1]); }

struct Mesh {
  std::vector<Vec2> vertices;
  std::vector<std::array<int, 3>> triangles;     // counter-clockwise
  std::vector<std::array<int, 2>> boundary_edges;  // closed CCW cycle along the circle
  double radius = 0.0;

  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
};

inline double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
}

inline double triangle_area(const Mesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  return signed_area(mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]);
}

inline Vec2 triangle_centroid(const Mesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  const auto& a = mesh.vertices[tri[0]];
  const auto& b = mesh.vertices[tri[1]];
  const auto& c = mesh.vertices[tri[2]];
  return {(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0};
}

inline double total_area(const Mesh& mesh) {
  double sum = 0.0;
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) sum += triangle_area(mesh, t);
  return sum;
}

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

inline std::unordered_map<std::uint64_t, int> edge_use_counts(const Mesh& mesh) {
  std::unordered_map<std::uint64_t, int> counts;
  counts.reserve(mesh.num_triangles() * 3);
  for (const auto& tri : mesh.triangles) {
    for (int e = 0; e < 3; ++e) ++counts[edge_key(tri[e], tri[(e + 1) % 3])];
  }
  return counts;
}

}  // namespace detail

inline std::size_t num_edges(const Mesh& mesh) { return detail::edge_use_counts(mesh).size(); }

inline double max_edge_length(const Mesh& mesh) {
  double longest = 0.0;
  for (const auto& tri : mesh.triangles) {
    for (int e = 0; e < 3; ++e) {
      longest = std::max(longest, distance(mesh.vertices[tri[e]], mesh.vertices[tri[(e + 1) % 3]]));
    }
  }
  return longest;
}

/// Checks every structural invariant of a disk mesh; throws InvalidMesh on the first violation.
inline void validate(const Mesh& mesh) {
  if (!(mesh.radius > 0.0)) throw InvalidMesh("mesh radius must be positive");
  if (mesh.triangles.empty()) throw InvalidMesh("mesh has no triangles");
  const int nv = static_cast<int>(mesh.num_vertices());
  for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
    for (int v : mesh.triangles[t]) {
      if (v < 0 || v >= nv) throw InvalidMesh("triangle references a missing vertex");
    }
    if (!(triangle_area(mesh, t) > 0.0)) {
      throw InvalidMesh("triangle " + std::to_string(t) + " has non-positive signed area");
    }
  }

  const double tol = 1e-9 * mesh.radius;
  const auto counts = detail::edge_use_counts(mesh);
  std::size_t boundary_count = 0;
  for (const auto& [key, uses] : counts) {
    if (uses == 1) {
      ++boundary_count;
    } else if (uses != 2) {
      throw InvalidMesh("edge shared by more than two triangles");
    }
  }
  if (boundary_count != mesh.boundary_edges.size()) {
    throw InvalidMesh("boundary_edges does not match the set of edges used by one triangle");
  }

  std::vector<int> next(nv, -1);
  for (const auto& [a, b] : mesh.boundary_edges) {
    auto it = counts.find(detail::edge_key(a, b));
    if (it == counts.end() || it->second != 1) throw InvalidMesh("listed boundary edge is interior");
    if (next[a] != -1) throw InvalidMesh("boundary vertex with two outgoing edges");
    next[a] = b;
    for (int v : {a, b}) {
      if (std::abs(norm(mesh.vertices[v]) - mesh.radius) > tol) {
        throw InvalidMesh("boundary vertex off the circle");
      }
    }
  }
  // single closed cycle
  const int start = mesh.boundary_edges.front()[0];
  int cur = start;
  std::size_t steps = 0;
  do {
    cur = next[cur];
    ++steps;
    if (cur < 0 || steps > mesh.boundary_edges.size()) throw InvalidMesh("boundary is not a closed cycle");
  } while (cur != start);
  if (steps != mesh.boundary_edges.size()) throw InvalidMesh("boundary splits into several cycles");

  for (int v = 0; v < nv; ++v) {
    const bool on_circle = std::abs(norm(mesh.vertices[v]) - mesh.radius) <= tol;
    if (on_circle != (next[v] != -1)) {
      throw InvalidMesh("vertex " + std::to_string(v) + " on the circle but not on the boundary cycle");
    }
  }
}

/// Structured polar-ring triangulation: concentric rings at radii i*h (i = 1..N) carrying 6i
/// equispaced vertices each, stitched ring to ring by an angular merge. Deterministic in
/// (radius, target_h); vertex count is 1 + 3N(N+1) with N = ceil(radius / target_h).
inline Mesh generate_disk_mesh(double radius, double target_h) {
  if (!(radius > 0.0) || !(target_h > 0.0)) throw InvalidArgument("radius and target_h must be positive");
  if (!(target_h < radius)) throw InvalidArgument("target_h must be smaller than radius");

  const int rings = static_cast<int>(std::ceil(radius / target_h - 1e-12));
  const double h = radius / rings;

  Mesh mesh;
  mesh.radius = radius;
  mesh.vertices.reserve(1 + 3 * static_cast<std::size_t>(rings) * (rings + 1));
  mesh.vertices.push_back({0.0, 0.0});

  std::vector<int> ring_start(rings + 1, 0);
  for (int i = 1; i <= rings; ++i) {
    ring_start[i] = static_cast<int>(mesh.vertices.size());
    const int count = 6 * i;
    const double r = (i == rings) ? radius : i * h;
    for (int k = 0; k < count; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / count;
      mesh.vertices.push_back({r * std::cos(angle), r * std::sin(angle)});
    }
  }

  // center fan
  for (int k = 0; k < 6; ++k) {
    mesh.triangles.push_back({0, ring_start[1] + k, ring_start[1] + (k + 1) % 6});
  }
  for (int i = 2; i <= rings; ++i) {
    const int p = 6 * (i - 1);
    const int q = 6 * i;
    auto inner = [&](int s) { return ring_start[i - 1] + s % p; };
    auto outer = [&](int t) { return ring_start[i] + t % q; };
    int a = 0;
    int b = 0;
    while (a < p || b < q) {
      // advance along whichever ring has the next vertex at the smaller angle
      const bool advance_inner = (b == q) || (a < p && static_cast<long>(a + 1) * q <= static_cast<long>(b + 1) * p);
      if (advance_inner) {
        mesh.triangles.push_back({inner(a), outer(b), inner(a + 1)});
        ++a;
      } else {
        mesh.triangles.push_back({inner(a), outer(b), outer(b + 1)});
        ++b;
      }
    }
  }

  const int outer_count = 6 * rings;
  for (int k = 0; k < outer_count; ++k) {
    mesh.boundary_edges.push_back({ring_start[rings] + k, ring_start[rings] + (k + 1) % outer_count});
  }
  return mesh;
}

/// Red refinement: every triangle split into four through its edge midpoints. Midpoints of
/// boundary edges are pushed radially onto the circle.
inline Mesh refine_uniform(const Mesh& mesh) {
  Mesh fine;
  fine.radius = mesh.radius;
  fine.vertices = mesh.vertices;

  std::unordered_map<std::uint64_t, int> boundary;
  for (const auto& [a, b] : mesh.boundary_edges) boundary.emplace(detail::edge_key(a, b), 1);

  std::unordered_map<std::uint64_t, int> midpoint;
  midpoint.reserve(mesh.num_triangles() * 2);
  auto mid = [&](int a, int b) {
    const auto key = detail::edge_key(a, b);
    if (auto it = midpoint.find(key); it != midpoint.end()) return it->second;
    const auto& pa = mesh.vertices[a];
    const auto& pb = mesh.vertices[b];
    Vec2 m{0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])};
    if (boundary.count(key)) {
      const double s = mesh.radius / norm(m);
      m = {m[0] * s, m[1] * s};
    }
    const int id = static_cast<int>(fine.vertices.size());
    fine.vertices.push_back(m);
    midpoint.emplace(key, id);
    return id;
  };

  fine.triangles.reserve(4 * mesh.num_triangles());
  for (const auto& [v0, v1, v2] : mesh.triangles) {
    const int m01 = mid(v0, v1);
    const int m12 = mid(v1, v2);
    const int m20 = mid(v2, v0);
    fine.triangles.push_back({v0, m01, m20});
    fine.triangles.push_back({m01, v1, m12});
    fine.triangles.push_back({m20, m12, v2});
    fine.triangles.push_back({m01, m12, m20});
  }
  fine.boundary_edges.reserve(2 * mesh.boundary_edges.size());
  for (const auto& [a, b] : mesh.boundary_edges) {
    const int m = mid(a, b);
    fine.boundary_edges.push_back({a, m});
    fine.boundary_edges.push_back({m, b});
  }
  return fine;
}

/// Plain-text dump: `vertices N triangles T boundary B`, then one record per line.
inline void write_mesh(std::ostream& out, const Mesh& mesh) {
  out << "vertices " << mesh.num_vertices() << " triangles " << mesh.num_triangles() << " boundary "
      << mesh.boundary_edges.size() << '\n';
  out << std::setprecision(17);
  for (const auto& [x, y] : mesh.vertices) out << x << ' ' << y << '\n';
  for (const auto& [a, b, c] : mesh.triangles) out << a << ' ' << b << ' ' << c << '\n';
  for (const auto& [a, b] : mesh.boundary_edges) out << a << ' ' << b << '\n';
}

}  // namespace pbsm
