#pragma once

// Physics-based surrogate of an elliptic forward map.
//
// The bilinear form is assumed to satisfy the continuity estimate
//
//   sup_{|v| <= 1} |A_theta(u, v) - A_theta'(u, v)| <= C G(theta, theta') F(u),
//
// and the surrogate of u_theta is the convex combination of precomputed solutions at the k
// design points nearest to theta under G, with weights proportional to 1 / (G F).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pbsm/errors.hpp"
#include "pbsm/fem.hpp"
#include "pbsm/mesh.hpp"
#include "pbsm/parallel.hpp"

namespace pbsm {

template <std::size_t D>
using Point = std::array<double, D>;

template <std::size_t D>
std::string to_string(const Point<D>& p) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < D; ++i) out << (i ? ", " : "") << p[i];
  out << ')';
  return out.str();
}

/// Admissible parameter set: a closed interval (d = 1) or a disk centered at the origin (d = 2).
struct ParameterDomain {
  enum class Kind { Interval, Disk };
  Kind kind = Kind::Interval;
  double lo = 0.0;
  double hi = 1.0;
  double radius = 0.0;

  static ParameterDomain interval(double lo, double hi) {
    if (!(lo < hi)) throw InvalidArgument("empty parameter interval");
    return {Kind::Interval, lo, hi, 0.0};
  }
  static ParameterDomain disk(double radius) {
    if (!(radius > 0.0)) throw InvalidArgument("parameter disk radius must be positive");
    return {Kind::Disk, 0.0, 0.0, radius};
  }

  std::size_t dimension() const { return kind == Kind::Interval ? 1 : 2; }

  template <std::size_t D>
  bool contains(const Point<D>& p, double tol = 1e-12) const {
    if constexpr (D == 1) {
      return kind == Kind::Interval && p[0] >= lo - tol && p[0] <= hi + tol;
    } else if constexpr (D == 2) {
      return kind == Kind::Disk && std::hypot(p[0], p[1]) <= radius * (1.0 + tol);
    } else {
      return false;
    }
  }

  /// Area (d = 2) or length (d = 1).
  double measure() const {
    return kind == Kind::Interval ? hi - lo : std::numbers::pi * radius * radius;
  }
};

enum class SolutionFunctional { GradL2, GradL4 };

inline double functional_value(const FieldSolution& sol, SolutionFunctional f) {
  return f == SolutionFunctional::GradL2 ? sol.grad_l2 : sol.grad_l4;
}

inline std::string to_string(SolutionFunctional f) { return f == SolutionFunctional::GradL2 ? "grad_l2" : "grad_l4"; }

inline SolutionFunctional parse_functional(const std::string& s) {
  if (s == "grad_l2") return SolutionFunctional::GradL2;
  if (s == "grad_l4") return SolutionFunctional::GradL4;
  throw FormatError("unknown solution functional '" + s + "'");
}

template <std::size_t D>
using Dissimilarity = std::function<double(const Point<D>&, const Point<D>&)>;

/// The (C, G, F, coercivity) quadruple of one inverse problem.
template <std::size_t D>
struct ModelStructure {
  std::string id;
  double C = 1.0;
  Dissimilarity<D> G;
  SolutionFunctional functional = SolutionFunctional::GradL2;
  double coercivity_lb = 1.0;
  ParameterDomain domain;
  std::map<std::string, double> params;
};

/// Area of the symmetric difference of two disks of equal radius r at center distance d:
/// 2 pi r^2 - 2 lens(d, r), written as 4 r^2 asin(d / 2r) + d sqrt(4 r^2 - d^2) to avoid cancellation at small d.
inline double symmetric_difference_area(const Vec2& c1, const Vec2& c2, double r) {
  if (!(r > 0.0)) throw InvalidArgument("disk radius must be positive");
  const double d = distance(c1, c2);
  if (d >= 2.0 * r) return 2.0 * std::numbers::pi * r * r;
  return 4.0 * r * r * std::asin(d / (2.0 * r)) + d * std::sqrt(4.0 * r * r - d * d);
}

namespace models {

/// Contrast of a centered inclusion: C = 1, G = |rho - rho'|, F = ||grad u||_2.
inline ModelStructure<1> conductivity(double lo = 0.0, double hi = 10.0) {
  ModelStructure<1> model;
  model.id = "conductivity";
  model.C = 1.0;
  model.G = [](const Point<1>& a, const Point<1>& b) { return std::abs(a[0] - b[0]); };
  model.functional = SolutionFunctional::GradL2;
  model.coercivity_lb = 1.0;
  model.domain = ParameterDomain::interval(lo, hi);
  return model;
}

/// Radius of a centered inclusion with known contrast rho:
/// C = (2 pi)^{1/4} rho, G = |R - R'|^{1/4}, F = ||grad u||_4.
inline ModelStructure<1> radius(double contrast, double lo = 0.0, double hi = 1.0) {
  ModelStructure<1> model;
  model.id = "radius";
  model.C = std::pow(2.0 * std::numbers::pi, 0.25) * contrast;
  model.G = [](const Point<1>& a, const Point<1>& b) { return std::pow(std::abs(a[0] - b[0]), 0.25); };
  model.functional = SolutionFunctional::GradL4;
  model.coercivity_lb = 1.0;
  model.domain = ParameterDomain::interval(lo, hi);
  model.params = {{"rho", contrast}};
  return model;
}

/// Center of a disk anomaly of radius r and contrast rho:
/// C = 1, G = ||lambda_c - lambda_c'||_4 = rho |D_r(c) sym-diff D_r(c')|^{1/4}, F = ||grad u||_4.
inline ModelStructure<2> anomaly(double contrast, double anomaly_radius, double domain_radius) {
  ModelStructure<2> model;
  model.id = "anomaly";
  model.C = 1.0;
  model.G = [contrast, anomaly_radius](const Point<2>& a, const Point<2>& b) {
    return contrast * std::pow(symmetric_difference_area({a[0], a[1]}, {b[0], b[1]}, anomaly_radius), 0.25);
  };
  model.functional = SolutionFunctional::GradL4;
  model.coercivity_lb = 1.0;
  model.domain = ParameterDomain::disk(domain_radius - anomaly_radius);
  model.params = {{"rho", contrast}, {"r", anomaly_radius}, {"domain_radius", domain_radius}};
  return model;
}

}  // namespace models

/// Rebuilds a registered model structure from its identifier and parameters.
template <std::size_t D>
ModelStructure<D> make_model(const std::string& id, const std::map<std::string, double>& params,
                             const ParameterDomain& domain) {
  auto param = [&](const char* key) {
    auto it = params.find(key);
    if (it == params.end()) throw FormatError(std::string("model parameter '") + key + "' missing");
    return it->second;
  };
  if constexpr (D == 1) {
    if (id == "conductivity") return models::conductivity(domain.lo, domain.hi);
    if (id == "radius") return models::radius(param("rho"), domain.lo, domain.hi);
  } else if constexpr (D == 2) {
    if (id == "anomaly") return models::anomaly(param("rho"), param("r"), param("domain_radius"));
  }
  throw FormatError("no registered " + std::to_string(D) + "-d model structure '" + id + "'");
}

template <std::size_t D>
struct Design {
  std::vector<Point<D>> points;
  std::string generator;
  int level = 0;
  double spacing = 0.0;

  std::size_t size() const { return points.size(); }
};

template <std::size_t D>
void validate(const Design<D>& design, const ParameterDomain& domain) {
  if (design.points.empty()) throw EmptyDesign("design has no points");
  for (const auto& p : design.points) {
    if (!domain.contains(p, 1e-9)) throw ParameterOutsideDomain("design point " + to_string(p) + " outside the domain");
  }
  auto sorted = design.points;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw InvalidArgument("design points are not pairwise distinct");
  }
}

/// {lo + (hi - lo) i / 2^l : i = 0..2^l}, n = 2^l + 1.
inline Design<1> build_design_dyadic_1d(double lo, double hi, int level) {
  if (level < 1) throw InvalidArgument("dyadic level must be >= 1");
  if (!(lo < hi)) throw InvalidArgument("empty interval");
  const long cells = 1L << level;
  Design<1> design;
  design.generator = "dyadic";
  design.level = level;
  design.spacing = (hi - lo) / static_cast<double>(cells);
  design.points.reserve(static_cast<std::size_t>(cells) + 1);
  for (long i = 0; i <= cells; ++i) {
    design.points.push_back({lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cells)});
  }
  return design;
}

/// Smallest level l >= 1 with l >= ln((1 - eps) / eps) / ln 2.
inline int required_level(double eps, int /*k*/ = 2) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidArgument("eps must lie in (0, 1)");
  const double bound = std::log((1.0 - eps) / eps) / std::log(2.0);
  return std::max(1, static_cast<int>(std::ceil(bound - 1e-12)));
}

namespace detail {

template <typename Offset>
Design<2> lattice_design(double domain_radius, double anomaly_radius, double spacing, double row_height,
                         Offset row_offset, const char* name) {
  if (!(spacing > 0.0)) throw InvalidArgument("lattice spacing must be positive");
  const double admissible = domain_radius - anomaly_radius;
  if (!(admissible > 0.0)) throw InvalidArgument("anomaly does not fit in the domain");
  Design<2> design;
  design.generator = name;
  design.spacing = spacing;
  const long rows = static_cast<long>(std::floor(admissible / row_height)) + 1;
  const long cols = static_cast<long>(std::floor(admissible / spacing)) + 2;
  const double tol = 1e-12 * admissible;
  for (long j = -rows; j <= rows; ++j) {
    const double y = static_cast<double>(j) * row_height;
    const double shift = row_offset(j);
    for (long i = -cols; i <= cols; ++i) {
      const double x = (static_cast<double>(i) + shift) * spacing;
      if (std::hypot(x, y) <= admissible + tol) design.points.push_back({x, y});
    }
  }
  return design;
}

}  // namespace detail

/// Triangular-lattice centers (rows spaced spacing*sqrt(3)/2, odd rows shifted half a spacing)
/// clipped to |c| <= domain_radius - r.
inline Design<2> build_design_triangular_2d(double domain_radius, double anomaly_radius, double spacing) {
  return detail::lattice_design(domain_radius, anomaly_radius, spacing, spacing * std::sqrt(3.0) / 2.0,
                                [](long j) { return (j % 2 != 0) ? 0.5 : 0.0; }, "triangular");
}

/// Square-grid centers clipped to |c| <= domain_radius - r.
inline Design<2> build_design_grid_2d(double domain_radius, double anomaly_radius, double spacing) {
  return detail::lattice_design(domain_radius, anomaly_radius, spacing, spacing, [](long) { return 0.0; }, "grid");
}

/// The k design points nearest to theta under G, sorted by (G, index).
struct NeighborSet {
  std::vector<std::size_t> indices;
  std::vector<double> g_values;
};

template <std::size_t D>
NeighborSet nearest_neighbors(const Point<D>& theta, std::span<const Point<D>> design, const Dissimilarity<D>& G,
                              std::size_t k) {
  if (design.empty()) throw EmptyDesign("nearest-neighbor query on an empty design");
  if (k < 1 || k > design.size()) throw InvalidArgument("k must satisfy 1 <= k <= n");
  std::vector<std::pair<double, std::size_t>> ranked(design.size());
  for (std::size_t i = 0; i < design.size(); ++i) ranked[i] = {G(theta, design[i]), i};
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k), ranked.end());
  NeighborSet set;
  set.indices.reserve(k);
  set.g_values.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    set.g_values.push_back(ranked[i].first);
    set.indices.push_back(ranked[i].second);
  }
  return set;
}

template <std::size_t D>
NeighborSet nearest_neighbors(const Point<D>& theta, const Design<D>& design, const Dissimilarity<D>& G,
                              std::size_t k) {
  return nearest_neighbors<D>(theta, std::span<const Point<D>>(design.points), G, k);
}

inline constexpr double kDefaultSnapThreshold = 1e-8;

/// Surrogate weights over a neighbor set. Snaps to the Kronecker vector of the first neighbor when
/// its G value is below eta; otherwise alpha_i = (1 / (G_i F_i)) / sum_j (1 / (G_j F_j)).
inline std::vector<double> coefficients(const NeighborSet& neighbors, std::span<const double> functional_values,
                                        double eta = kDefaultSnapThreshold) {
  const std::size_t k = neighbors.indices.size();
  if (k == 0 || functional_values.size() != k) throw InvalidArgument("one F value per neighbor required");
  std::vector<double> alpha(k, 0.0);
  if (neighbors.g_values.front() < eta) {
    alpha.front() = 1.0;
    return alpha;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    alpha[i] = 1.0 / (neighbors.g_values[i] * functional_values[i]);
    total += alpha[i];
  }
  for (double& a : alpha) a /= total;
  return alpha;
}

/// Precomputed surrogate: design, observation rows A_i = H(u_i), and F(u_i).
template <std::size_t D>
struct SurrogateStore {
  ModelStructure<D> model;
  Design<D> design;
  std::size_t m = 0;
  std::vector<double> observations;  // n x m, row-major
  std::vector<double> functional_values;
  int k_default = 2;
  double eta = kDefaultSnapThreshold;
  std::string provenance;

  // validation mode only: full nodal solutions at the design points
  std::shared_ptr<const Mesh> mesh;
  std::vector<Eigen::VectorXd> solutions;

  std::size_t size() const { return design.size(); }

  std::span<const double> row(std::size_t i) const { return {observations.data() + i * m, m}; }
};

template <std::size_t D>
void validate(const SurrogateStore<D>& store) {
  const std::size_t n = store.design.size();
  if (n == 0) throw EmptyDesign("surrogate store is empty");
  if (store.observations.size() != n * store.m || store.functional_values.size() != n) {
    throw FormatError("surrogate store arrays disagree with the design size");
  }
  for (double f : store.functional_values) {
    if (!(f > 0.0) || !std::isfinite(f)) throw FormatError("stored F values must be positive and finite");
  }
}

/// Result of one exact forward evaluation at a design point.
struct ForwardSample {
  std::vector<double> observations;
  double functional = 0.0;
  std::optional<Eigen::VectorXd> solution;
};

template <std::size_t D>
using ForwardSampler = std::function<ForwardSample(const Point<D>&)>;

struct PreprocessOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  int k_default = 2;
  double eta = kDefaultSnapThreshold;
  std::string provenance;
  bool keep_solutions = false;
  std::shared_ptr<const Mesh> mesh;  // recorded with the solutions in validation mode
};

/// One exact forward evaluation per design point, run in parallel with write-once result slots.
template <std::size_t D>
SurrogateStore<D> preprocess(const Design<D>& design, const ModelStructure<D>& model, const ForwardSampler<D>& forward,
                             const PreprocessOptions& options = {}) {
  validate(design, model.domain);
  const std::size_t n = design.size();
  std::vector<ForwardSample> samples(n);
  parallel_for(n, options.threads, [&](std::size_t i) {
    try {
      samples[i] = forward(design.points[i]);
    } catch (const std::exception& e) {
      throw SolverFailure("forward solve failed at design point " + std::to_string(i) + " " +
                          to_string(design.points[i]) + ": " + e.what());
    }
  });

  SurrogateStore<D> store;
  store.model = model;
  store.design = design;
  store.m = samples.front().observations.size();
  store.k_default = options.k_default;
  store.eta = options.eta;
  store.provenance = options.provenance;
  store.observations.reserve(n * store.m);
  store.functional_values.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].observations.size() != store.m) throw SolverFailure("inconsistent observation count");
    store.observations.insert(store.observations.end(), samples[i].observations.begin(), samples[i].observations.end());
    store.functional_values.push_back(samples[i].functional);
  }
  if (options.keep_solutions) {
    store.mesh = options.mesh;
    store.solutions.reserve(n);
    for (auto& s : samples) {
      if (!s.solution) throw InvalidArgument("validation mode needs full solutions from the forward sampler");
      store.solutions.push_back(std::move(*s.solution));
    }
  }
  validate(store);
  return store;
}

/// Neighbors of theta and their weights.
struct Combination {
  NeighborSet neighbors;
  std::vector<double> alpha;
};

template <std::size_t D>
Combination surrogate_combination(const Point<D>& theta, const SurrogateStore<D>& store, std::size_t k, double eta) {
  if (!store.model.domain.contains(theta)) {
    throw ParameterOutsideDomain("parameter " + to_string(theta) + " outside the admissible set");
  }
  Combination combo;
  combo.neighbors = nearest_neighbors<D>(theta, store.design, store.model.G, k);
  std::vector<double> f(k);
  for (std::size_t i = 0; i < k; ++i) f[i] = store.functional_values[combo.neighbors.indices[i]];
  combo.alpha = coefficients(combo.neighbors, f, eta);
  return combo;
}

/// S = sum_i alpha_i A_i over the k nearest design points; S = A_j exactly when snapped.
template <std::size_t D>
std::vector<double> evaluate_surrogate(const Point<D>& theta, const SurrogateStore<D>& store, std::size_t k,
                                       double eta) {
  const auto combo = surrogate_combination(theta, store, k, eta);
  if (combo.neighbors.g_values.front() < eta) {
    const auto row = store.row(combo.neighbors.indices.front());
    return {row.begin(), row.end()};
  }
  std::vector<double> s(store.m, 0.0);
  for (std::size_t i = 0; i < combo.alpha.size(); ++i) {
    const auto row = store.row(combo.neighbors.indices[i]);
    for (std::size_t j = 0; j < store.m; ++j) s[j] += combo.alpha[i] * row[j];
  }
  return s;
}

template <std::size_t D>
std::vector<double> evaluate_surrogate(const Point<D>& theta, const SurrogateStore<D>& store) {
  return evaluate_surrogate(theta, store, static_cast<std::size_t>(store.k_default), store.eta);
}

/// Surrogate nodal field sum_i alpha_i u_i (validation mode stores only).
template <std::size_t D>
Eigen::VectorXd surrogate_solution(const Point<D>& theta, const SurrogateStore<D>& store, std::size_t k, double eta) {
  if (store.solutions.size() != store.size()) throw InvalidArgument("store was built without full solutions");
  const auto combo = surrogate_combination(theta, store, k, eta);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(store.solutions.front().size());
  for (std::size_t i = 0; i < combo.alpha.size(); ++i) u += combo.alpha[i] * store.solutions[combo.neighbors.indices[i]];
  return u;
}

struct ErrorBound {
  double residual = 0.0;  // eps_theta: bound on the weak-form residual of the surrogate
  double solution = 0.0;  // eps_theta / coercivity lower bound: bound on ||u_hat - u||_V
};

/// eps_theta = C / ((1/k) sum_j 1 / (G(theta, theta_j) F(u_j))); zero inside the snap radius.
template <std::size_t D>
ErrorBound error_bound(const Point<D>& theta, const SurrogateStore<D>& store, std::size_t k,
                       double eta = kDefaultSnapThreshold) {
  const auto neighbors = nearest_neighbors<D>(theta, store.design, store.model.G, k);
  if (neighbors.g_values.front() < eta) return {};
  double harmonic = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    harmonic += 1.0 / (neighbors.g_values[i] * store.functional_values[neighbors.indices[i]]);
  }
  const double residual = store.model.C / (harmonic / static_cast<double>(k));
  return {residual, residual / store.model.coercivity_lb};
}

struct DesignReport {
  double max_kth_g = 0.0;     // max over samples of G(theta, k-th neighbor)
  std::size_t worst_sample = 0;
  double eps = 0.0;
  bool passes = false;        // max_kth_g <= eps
  double implied_bound = 0.0;   // C * F_max * eps
  double observed_bound = 0.0;  // C * F_max * max_kth_g
};

/// Empirical check of the eps-approximation property over a sample set covering the domain.
template <std::size_t D>
DesignReport verify_design_approximation(const Design<D>& design, std::span<const Point<D>> samples,
                                         const Dissimilarity<D>& G, double f_max, double C, std::size_t k, double eps) {
  if (samples.empty()) throw InvalidArgument("no samples to verify against");
  DesignReport report;
  report.eps = eps;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const auto nb = nearest_neighbors<D>(samples[s], design, G, k);
    if (nb.g_values.back() > report.max_kth_g) {
      report.max_kth_g = nb.g_values.back();
      report.worst_sample = s;
    }
  }
  report.passes = report.max_kth_g <= eps;
  report.implied_bound = C * f_max * eps;
  report.observed_bound = C * f_max * report.max_kth_g;
  return report;
}

/// `count` equispaced samples covering [lo, hi] including both ends.
inline std::vector<Point<1>> grid_samples(double lo, double hi, std::size_t count) {
  std::vector<Point<1>> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = {lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1)};
  }
  return out;
}

/// Square-grid samples of spacing h inside the disk of given radius, plus points on its rim.
inline std::vector<Point<2>> disk_samples(double radius, double h) {
  std::vector<Point<2>> out;
  const long half = static_cast<long>(std::floor(radius / h));
  for (long j = -half; j <= half; ++j) {
    for (long i = -half; i <= half; ++i) {
      const double x = static_cast<double>(i) * h;
      const double y = static_cast<double>(j) * h;
      if (std::hypot(x, y) <= radius) out.push_back({x, y});
    }
  }
  const long rim = static_cast<long>(std::ceil(2.0 * std::numbers::pi * radius / h));
  for (long i = 0; i < rim; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(rim);
    out.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return out;
}

}  // namespace pbsm
