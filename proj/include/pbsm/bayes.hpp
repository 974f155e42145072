#pragma once

// Gaussian-noise posteriors over PDE parameters and the MCMC machinery used to explore them.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pbsm/errors.hpp"
#include "pbsm/mesh.hpp"
#include "pbsm/store_io.hpp"
#include "pbsm/surrogate.hpp"

namespace pbsm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct Observation {
  std::vector<double> y;
  std::vector<Vec2> points;
  double sigma = 0.01;

  void validate() const {
    if (y.empty()) throw InvalidArgument("observation needs at least one value");
    if (!points.empty() && points.size() != y.size()) throw InvalidArgument("one point per observed value");
    if (!(sigma > 0.0)) throw InvalidArgument("noise sigma must be positive");
  }
};

/// -(m/2) ln(2 pi sigma^2) - |y - pred|^2 / (2 sigma^2)
inline double log_likelihood(std::span<const double> y, std::span<const double> prediction, double sigma) {
  if (y.size() != prediction.size()) throw InvalidArgument("prediction length differs from data length");
  double sq = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - prediction[i];
    sq += r * r;
  }
  const double m = static_cast<double>(y.size());
  return -0.5 * m * std::log(2.0 * std::numbers::pi * sigma * sigma) - sq / (2.0 * sigma * sigma);
}

template <std::size_t D>
using ForwardMap = std::function<std::vector<double>(const Point<D>&)>;

template <std::size_t D>
using LogDensity = std::function<double(const Point<D>&)>;

/// Uniform prior on the domain times the Gaussian likelihood; the evidence is never needed.
template <std::size_t D>
struct PosteriorSpec {
  ForwardMap<D> forward;
  ParameterDomain prior;
  Observation observation;
};

template <std::size_t D>
double log_posterior(const Point<D>& theta, const PosteriorSpec<D>& spec) {
  if (!spec.prior.contains(theta, 0.0)) return kNegInf;
  try {
    const auto prediction = spec.forward(theta);
    return log_likelihood(spec.observation.y, prediction, spec.observation.sigma);
  } catch (const Error& e) {
    std::clog << "warning: forward map failed at " << to_string(theta) << ": " << e.what() << '\n';
    return kNegInf;
  }
}

template <std::size_t D>
LogDensity<D> make_log_density(PosteriorSpec<D> spec) {
  spec.observation.validate();
  return [spec = std::move(spec)](const Point<D>& theta) { return log_posterior(theta, spec); };
}

template <std::size_t D>
struct Chain {
  std::vector<Point<D>> samples;
  std::vector<double> logpost;
  double acceptance_rate = 0.0;
  std::uint64_t seed = 0;
  std::string sampler;
  std::size_t burn_in = 0;
  std::optional<double> iat;

  std::size_t size() const { return samples.size(); }

  std::vector<double> component(std::size_t j, std::size_t skip = 0) const {
    std::vector<double> out;
    out.reserve(samples.size() > skip ? samples.size() - skip : 0);
    for (std::size_t i = skip; i < samples.size(); ++i) out.push_back(samples[i][j]);
    return out;
  }
};

/// Random-walk Metropolis with a spherical Gaussian proposal of standard deviation step_scale.
template <std::size_t D>
Chain<D> rwm_sample(const LogDensity<D>& log_density, const Point<D>& theta0, std::size_t n_iter, double step_scale,
                    std::uint64_t seed) {
  if (!(step_scale > 0.0)) throw InvalidArgument("step_scale must be positive");
  double lp = log_density(theta0);
  if (!std::isfinite(lp)) throw InvalidStart("log-posterior at the starting point is not finite");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Chain<D> chain;
  chain.seed = seed;
  chain.sampler = "rwm";
  chain.samples.reserve(n_iter);
  chain.logpost.reserve(n_iter);
  Point<D> x = theta0;
  std::size_t accepted = 0;
  for (std::size_t it = 0; it < n_iter; ++it) {
    Point<D> y = x;
    for (auto& c : y) c += step_scale * normal(rng);
    const double lq = log_density(y);
    const double u = uniform(rng);
    if (std::isfinite(lq) && std::log(u) < lq - lp) {
      x = y;
      lp = lq;
      ++accepted;
    }
    chain.samples.push_back(x);
    chain.logpost.push_back(lp);
  }
  chain.acceptance_rate = n_iter ? static_cast<double>(accepted) / static_cast<double>(n_iter) : 0.0;
  return chain;
}

template <std::size_t D>
Chain<D> rwm_sample(const PosteriorSpec<D>& spec, const Point<D>& theta0, std::size_t n_iter, double step_scale,
                    std::uint64_t seed) {
  return rwm_sample<D>(make_log_density(spec), theta0, n_iter, step_scale, seed);
}

/// t-walk tuning constants (walk length, traverse shape, expected moved coordinates, kernel weights).
struct TwalkParams {
  double aw = 1.5;
  double at = 6.0;
  double n1phi = 4.0;
  std::array<double, 4> move_probs{0.4918, 0.4918, 0.0082, 0.0082};  // walk, traverse, blow, hop
};

namespace detail {

template <std::size_t D>
double sq_norm_on(const Point<D>& a, const Point<D>& b, const std::array<bool, D>& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    if (phi[i]) s += (a[i] - b[i]) * (a[i] - b[i]);
  }
  return s;
}

template <std::size_t D>
double max_abs_on(const Point<D>& a, const Point<D>& b, const std::array<bool, D>& phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    if (phi[i]) s = std::max(s, std::abs(a[i] - b[i]));
  }
  return s;
}

/// Log density of N(center, sd^2) restricted to the phi coordinates.
template <std::size_t D>
double log_gauss_on(const Point<D>& h, const Point<D>& center, double sd, const std::array<bool, D>& phi, int nphi) {
  if (!(sd > 0.0)) return kNegInf;
  return -0.5 * nphi * std::log(2.0 * std::numbers::pi) - nphi * std::log(sd) -
         0.5 * sq_norm_on(h, center, phi) / (sd * sd);
}

}  // namespace detail

/// Two-point self-adjusting sampler with walk, traverse, blow, and hop kernels. Each iteration
/// picks a kernel and which of the two points moves (the other one is the pivot).
template <std::size_t D>
Chain<D> twalk_sample(const LogDensity<D>& log_density, const Point<D>& theta0, const Point<D>& theta0p,
                      std::size_t n_iter, std::uint64_t seed, const TwalkParams& params = {}) {
  for (std::size_t i = 0; i < D; ++i) {
    if (theta0[i] == theta0p[i]) throw InvalidStart("t-walk starting points must differ in every coordinate");
  }
  double lx = log_density(theta0);
  double lxp = log_density(theta0p);
  if (!std::isfinite(lx) || !std::isfinite(lxp)) throw InvalidStart("log-posterior at a starting point is not finite");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double pphi = std::min(static_cast<double>(D), params.n1phi) / static_cast<double>(D);
  const double aw = params.aw;
  const double at = params.at;
  std::array<double, 4> cumulative{};
  std::partial_sum(params.move_probs.begin(), params.move_probs.end(), cumulative.begin());

  Chain<D> chain;
  chain.seed = seed;
  chain.sampler = "twalk";
  chain.samples.reserve(n_iter);
  chain.logpost.reserve(n_iter);
  Point<D> x = theta0;
  Point<D> xp = theta0p;
  std::size_t accepted = 0;

  for (std::size_t it = 0; it < n_iter; ++it) {
    const double ker = uniform(rng) * cumulative[3];
    const bool move_primary = uniform(rng) < 0.5;
    // the moving point and the pivot
    Point<D>& a = move_primary ? x : xp;
    const Point<D>& b = move_primary ? xp : x;
    double& la = move_primary ? lx : lxp;

    std::array<bool, D> phi{};
    int nphi = 0;
    for (auto& p : phi) {
      p = uniform(rng) < pphi;
      nphi += p ? 1 : 0;
    }

    Point<D> h = a;
    double log_correction = 0.0;
    if (ker < cumulative[0]) {
      for (std::size_t i = 0; i < D; ++i) {
        if (!phi[i]) continue;
        const double u = uniform(rng);
        const double z = (aw / (1.0 + aw)) * (aw * u * u + 2.0 * u - 1.0);
        h[i] = a[i] + (a[i] - b[i]) * z;
      }
    } else if (ker < cumulative[1]) {
      const double beta = uniform(rng) < (at - 1.0) / (2.0 * at) ? std::pow(uniform(rng), 1.0 / (at + 1.0))
                                                                  : std::pow(uniform(rng), 1.0 / (1.0 - at));
      for (std::size_t i = 0; i < D; ++i) {
        if (phi[i]) h[i] = b[i] + beta * (b[i] - a[i]);
      }
      if (nphi > 0) log_correction = (nphi - 2) * std::log(beta);
    } else if (ker < cumulative[2]) {
      const double sd = detail::max_abs_on(b, a, phi);
      for (std::size_t i = 0; i < D; ++i) {
        if (phi[i]) h[i] = b[i] + sd * normal(rng);
      }
      if (nphi > 0) {
        const double sd_back = detail::max_abs_on(b, h, phi);
        log_correction = detail::log_gauss_on(a, b, sd_back, phi, nphi) - detail::log_gauss_on(h, b, sd, phi, nphi);
      }
    } else {
      const double sd = detail::max_abs_on(b, a, phi) / 3.0;
      for (std::size_t i = 0; i < D; ++i) {
        if (phi[i]) h[i] = a[i] + sd * normal(rng);
      }
      if (nphi > 0) {
        const double sd_back = detail::max_abs_on(b, h, phi) / 3.0;
        log_correction = detail::log_gauss_on(a, h, sd_back, phi, nphi) - detail::log_gauss_on(h, a, sd, phi, nphi);
      }
    }

    const double u = uniform(rng);
    if (nphi > 0 && h != b) {
      const double lh = log_density(h);
      const double log_ratio = lh - la + log_correction;
      if (std::isfinite(lh) && !std::isnan(log_ratio) && std::log(u) < log_ratio) {
        a = h;
        la = lh;
        ++accepted;
      }
    }
    chain.samples.push_back(x);
    chain.logpost.push_back(lx);
  }
  chain.acceptance_rate = n_iter ? static_cast<double>(accepted) / static_cast<double>(n_iter) : 0.0;
  return chain;
}

template <std::size_t D>
Chain<D> twalk_sample(const PosteriorSpec<D>& spec, const Point<D>& theta0, const Point<D>& theta0p,
                      std::size_t n_iter, std::uint64_t seed) {
  return twalk_sample<D>(make_log_density(spec), theta0, theta0p, n_iter, seed);
}

inline constexpr std::size_t kMinIatLength = 1000;

/// Integrated autocorrelation time by the initial positive sequence estimator: sums of adjacent
/// autocovariance pairs are accumulated while they stay positive.
inline double iat(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < kMinIatLength) throw ChainTooShort("IAT needs at least 1000 samples, got " + std::to_string(n));
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(n);
  std::vector<double> c(series.begin(), series.end());
  for (double& v : c) v -= mean;

  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += c[i] * c[i + lag];
    return s / static_cast<double>(n);
  };
  const double gamma0 = autocov(0);
  if (!(gamma0 > 0.0) || gamma0 <= 1e-300) throw DegenerateChain("chain has zero variance");

  double sum = 0.0;
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    const double pair = (k == 0 ? gamma0 : autocov(2 * k)) + autocov(2 * k + 1);
    if (!(pair > 0.0)) break;
    sum += pair;
  }
  return std::max(1.0, (2.0 * sum - gamma0) / gamma0);
}

/// Largest per-coordinate IAT after discarding burn_in samples.
template <std::size_t D>
double chain_iat(const Chain<D>& chain, std::size_t burn_in = 0) {
  double worst = 1.0;
  for (std::size_t j = 0; j < D; ++j) {
    const auto series = chain.component(j, burn_in);
    worst = std::max(worst, iat(series));
  }
  return worst;
}

/// Axis-aligned binning box for histogram comparisons.
template <std::size_t D>
struct BinBox {
  Point<D> lo{};
  Point<D> hi{};
};

template <std::size_t D>
BinBox<D> union_box(std::span<const Point<D>> a, std::span<const Point<D>> b) {
  BinBox<D> box;
  box.lo.fill(std::numeric_limits<double>::infinity());
  box.hi.fill(-std::numeric_limits<double>::infinity());
  for (auto samples : {a, b}) {
    for (const auto& p : samples) {
      for (std::size_t j = 0; j < D; ++j) {
        box.lo[j] = std::min(box.lo[j], p[j]);
        box.hi[j] = std::max(box.hi[j], p[j]);
      }
    }
  }
  for (std::size_t j = 0; j < D; ++j) {
    if (!(box.hi[j] > box.lo[j])) box.hi[j] = box.lo[j] + 1.0;
  }
  return box;
}

/// Normalized histogram over bins^D cells of the box; samples outside are clamped to edge cells.
template <std::size_t D>
std::vector<double> histogram(std::span<const Point<D>> samples, std::size_t bins, const BinBox<D>& box) {
  std::size_t cells = 1;
  for (std::size_t j = 0; j < D; ++j) cells *= bins;
  std::vector<double> mass(cells, 0.0);
  if (samples.empty()) return mass;
  for (const auto& p : samples) {
    std::size_t index = 0;
    for (std::size_t j = 0; j < D; ++j) {
      const double t = (p[j] - box.lo[j]) / (box.hi[j] - box.lo[j]);
      const auto b = static_cast<std::size_t>(std::clamp(std::floor(t * static_cast<double>(bins)), 0.0,
                                                         static_cast<double>(bins - 1)));
      index = index * bins + b;
    }
    mass[index] += 1.0;
  }
  for (double& v : mass) v /= static_cast<double>(samples.size());
  return mass;
}

/// Total variation between two sample sets over common bins: 0.5 sum |p - q|.
template <std::size_t D>
double histogram_tv(std::span<const Point<D>> a, std::span<const Point<D>> b, std::size_t bins,
                    std::optional<BinBox<D>> box = std::nullopt) {
  if (bins < 1) throw InvalidArgument("need at least one bin");
  if (a.empty() || b.empty()) throw InvalidArgument("histogram TV of an empty sample set");
  const auto range = box ? *box : union_box<D>(a, b);
  const auto p = histogram<D>(a, bins, range);
  const auto q = histogram<D>(b, bins, range);
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

template <std::size_t D>
double histogram_tv(const Chain<D>& a, const Chain<D>& b, std::size_t bins, std::size_t burn_in,
                    std::optional<BinBox<D>> box = std::nullopt) {
  auto tail = [burn_in](const Chain<D>& c) {
    const std::size_t skip = std::min(burn_in, c.samples.size());
    return std::span<const Point<D>>(c.samples).subspan(skip);
  };
  return histogram_tv<D>(tail(a), tail(b), bins, box);
}

/// Sample quantiles with linear interpolation between order statistics: x[(n-1)p].
inline std::vector<double> quantiles(std::vector<double> values, std::span<const double> probs) {
  if (values.empty()) throw InvalidArgument("quantiles of an empty sample");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(probs.size());
  const double last = static_cast<double>(values.size() - 1);
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("quantile probability outside [0, 1]");
    const double h = last * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    out.push_back(values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]));
  }
  return out;
}

/// y = forward(theta) + N(0, sigma^2) noise from a seeded generator.
template <std::size_t D>
Observation generate_synthetic_data(const Point<D>& true_theta, const ForwardMap<D>& forward,
                                    std::vector<Vec2> points, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be nonnegative");
  Observation obs;
  obs.y = forward(true_theta);
  obs.points = std::move(points);
  obs.sigma = sigma;
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : obs.y) v += noise(rng);
  }
  return obs;
}

/// Chain text format: `# key value` metadata lines, a column header, then
/// `iteration,theta_0,...,logpost` rows with 17 significant digits.
template <std::size_t D>
void write_chain(std::ostream& out, const Chain<D>& chain) {
  out << "# sampler " << chain.sampler << '\n';
  out << "# seed " << chain.seed << '\n';
  out << "# n_iter " << chain.size() << '\n';
  out << "# burn_in " << chain.burn_in << '\n';
  out << "# acceptance " << format_real(chain.acceptance_rate) << '\n';
  if (chain.iat) out << "# iat " << format_real(*chain.iat) << '\n';
  out << "iteration";
  for (std::size_t j = 0; j < D; ++j) out << ",theta_" << j;
  out << ",logpost\n";
  for (std::size_t i = 0; i < chain.size(); ++i) {
    out << i;
    for (double v : chain.samples[i]) out << ',' << format_real(v);
    out << ',' << format_real(chain.logpost[i]) << '\n';
  }
}

template <std::size_t D>
Chain<D> read_chain(std::istream& in) {
  Chain<D> chain;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string key;
      std::string value;
      meta >> key >> value;
      if (key == "sampler") chain.sampler = value;
      else if (key == "seed") chain.seed = std::stoull(value);
      else if (key == "burn_in") chain.burn_in = std::stoull(value);
      else if (key == "acceptance") chain.acceptance_rate = std::stod(value);
      else if (key == "iat") chain.iat = std::stod(value);
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<double> cells;
    while (std::getline(row, cell, ',')) cells.push_back(std::stod(cell));
    if (cells.size() != D + 2) throw FormatError("chain row has " + std::to_string(cells.size()) + " fields");
    Point<D> p;
    for (std::size_t j = 0; j < D; ++j) p[j] = cells[j + 1];
    chain.samples.push_back(p);
    chain.logpost.push_back(cells[D + 1]);
  }
  if (!header_seen) throw FormatError("chain file has no column header");
  return chain;
}

}  // namespace pbsm
