#pragma once

// Configuration-driven pipeline for the three EIT experiments: conductivity contrast of a centered
// inclusion, radius of a centered inclusion, and center of a small anomaly in a radius-5 disk.
//
// Output directory layout:
//   config.json                      resolved configuration
//   store_<tag>.pbsm                 one surrogate store per design
//   data.json                        synthetic observations
//   chain_<tag>_seed<s>.csv          surrogate-posterior chains
//   chain_exact_seed<s>.csv          exact-forward-map chains
//   report.json, report.txt          quantiles, TV table, error-bound summary
//   histograms.csv                   marginal histograms of every chain
//   reconstruction_<chain>.csv       anomaly experiment: thinned tail of each chain
//   timing_*.json, timing.txt        wall-clock records, kept apart from the deterministic report

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbsm/bayes.hpp"
#include "pbsm/errors.hpp"
#include "pbsm/fem.hpp"
#include "pbsm/mesh.hpp"
#include "pbsm/oracle.hpp"
#include "pbsm/parallel.hpp"
#include "pbsm/store_io.hpp"
#include "pbsm/surrogate.hpp"

namespace pbsm {

using json = nlohmann::json;

struct DesignSpec {
  std::string generator = "dyadic";  // dyadic | triangular | grid
  std::vector<int> levels;           // dyadic
  std::vector<double> spacings;      // triangular, grid

  std::size_t count() const { return generator == "dyadic" ? levels.size() : spacings.size(); }
};

struct SamplerSpec {
  std::string type = "twalk";  // twalk | rwm
  std::size_t iterations = 100000;
  std::size_t burn_in = 10000;
  std::vector<std::uint64_t> seeds{1};
  double step_scale = 0.0;  // rwm; 0 selects a tenth of the parameter range
  std::vector<double> start;
  std::vector<double> start_alt;
};

struct ExperimentConfig {
  std::string experiment = "conductivity";
  std::vector<double> truth;
  double contrast = 6.0;           // known contrast (radius, anomaly)
  double inclusion_radius = 0.85;  // known radius (conductivity)
  double anomaly_radius = 0.25;
  double domain_radius = 1.0;
  std::array<double, 2> parameter_interval{0.0, 10.0};
  DesignSpec design;
  int k = 2;
  double eta = kDefaultSnapThreshold;
  std::size_t m = 10;
  double sigma = 0.01;
  std::string observation_source = "oracle";  // where stored A_i come from: oracle | fem
  std::string data_source = "oracle";
  std::uint64_t data_seed = 2024;
  SamplerSpec sampler;
  std::string exact_mode = "oracle";  // oracle | fem | none
  std::size_t fem_in_loop_max_iterations = 200;
  double target_h = 0.03;
  int refinements = 0;
  std::size_t bins = 50;
  unsigned threads = 0;
  std::string output = "out/conductivity";

  std::size_t dimension() const { return experiment == "anomaly" ? 2 : 1; }

  static ExperimentConfig defaults(const std::string& experiment);
  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
};

inline ExperimentConfig ExperimentConfig::defaults(const std::string& experiment) {
  ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "conductivity") {
    c.truth = {3.2};
    c.inclusion_radius = 0.85;
    c.parameter_interval = {0.0, 10.0};
    c.design.levels = {2, 3, 4, 5};
    c.output = "out/conductivity";
  } else if (experiment == "radius") {
    c.truth = {0.725};
    c.contrast = 6.0;
    c.parameter_interval = {0.0, 1.0};
    c.design.levels = {3, 4, 5, 6, 7};
    c.output = "out/radius";
  } else if (experiment == "anomaly") {
    c.truth = {2.5, -3.1};
    c.contrast = 6.0;
    c.anomaly_radius = 0.25;
    c.domain_radius = 5.0;
    c.design.generator = "triangular";
    c.design.spacings = {0.225};
    c.k = 3;
    c.m = 20;
    c.observation_source = "fem";
    c.data_source = "fem";
    c.exact_mode = "fem";
    c.target_h = 0.1;
    c.output = "out/anomaly";
  } else {
    throw ConfigError("unknown experiment '" + experiment + "' (expected conductivity, radius, or anomaly)");
  }
  return c;
}

namespace detail {

inline void reject_unknown_keys(const json& object, std::initializer_list<const char*> known, const std::string& where) {
  if (!object.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, value] : object.items()) {
    bool found = false;
    for (const char* k : known) found = found || key == k;
    if (!found) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read_if(const json& object, const char* key, T& target) {
  if (object.contains(key)) target = object.at(key).get<T>();
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    detail::reject_unknown_keys(j,
                                {"experiment", "truth", "physics", "parameter_interval", "design", "k", "eta",
                                 "observations", "data", "sampler", "exact", "mesh", "analysis", "threads", "output"},
                                "config");
    if (!j.contains("experiment")) throw ConfigError("config needs an 'experiment' key");
    ExperimentConfig c = defaults(j.at("experiment").get<std::string>());
    detail::read_if(j, "truth", c.truth);
    if (j.contains("physics")) {
      const auto& p = j.at("physics");
      detail::reject_unknown_keys(p, {"contrast", "inclusion_radius", "anomaly_radius", "domain_radius"}, "physics");
      detail::read_if(p, "contrast", c.contrast);
      detail::read_if(p, "inclusion_radius", c.inclusion_radius);
      detail::read_if(p, "anomaly_radius", c.anomaly_radius);
      detail::read_if(p, "domain_radius", c.domain_radius);
    }
    detail::read_if(j, "parameter_interval", c.parameter_interval);
    if (j.contains("design")) {
      const auto& d = j.at("design");
      detail::reject_unknown_keys(d, {"generator", "levels", "spacings"}, "design");
      DesignSpec spec;
      detail::read_if(d, "generator", spec.generator);
      detail::read_if(d, "levels", spec.levels);
      detail::read_if(d, "spacings", spec.spacings);
      c.design = spec;
    }
    detail::read_if(j, "k", c.k);
    detail::read_if(j, "eta", c.eta);
    if (j.contains("observations")) {
      const auto& o = j.at("observations");
      detail::reject_unknown_keys(o, {"m", "sigma", "source"}, "observations");
      detail::read_if(o, "m", c.m);
      detail::read_if(o, "sigma", c.sigma);
      detail::read_if(o, "source", c.observation_source);
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      detail::reject_unknown_keys(d, {"source", "seed"}, "data");
      detail::read_if(d, "source", c.data_source);
      detail::read_if(d, "seed", c.data_seed);
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      detail::reject_unknown_keys(s, {"type", "iterations", "burn_in", "seeds", "step_scale", "start", "start_alt"},
                                  "sampler");
      detail::read_if(s, "type", c.sampler.type);
      detail::read_if(s, "iterations", c.sampler.iterations);
      detail::read_if(s, "burn_in", c.sampler.burn_in);
      detail::read_if(s, "seeds", c.sampler.seeds);
      detail::read_if(s, "step_scale", c.sampler.step_scale);
      detail::read_if(s, "start", c.sampler.start);
      detail::read_if(s, "start_alt", c.sampler.start_alt);
    }
    if (j.contains("exact")) {
      const auto& e = j.at("exact");
      detail::reject_unknown_keys(e, {"mode", "fem_max_iterations"}, "exact");
      detail::read_if(e, "mode", c.exact_mode);
      detail::read_if(e, "fem_max_iterations", c.fem_in_loop_max_iterations);
    }
    if (j.contains("mesh")) {
      const auto& m = j.at("mesh");
      detail::reject_unknown_keys(m, {"target_h", "refinements"}, "mesh");
      detail::read_if(m, "target_h", c.target_h);
      detail::read_if(m, "refinements", c.refinements);
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      detail::reject_unknown_keys(a, {"bins"}, "analysis");
      detail::read_if(a, "bins", c.bins);
    }
    detail::read_if(j, "threads", c.threads);
    detail::read_if(j, "output", c.output);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

inline json ExperimentConfig::to_json() const {
  json design_json{{"generator", design.generator}};
  if (design.generator == "dyadic") {
    design_json["levels"] = design.levels;
  } else {
    design_json["spacings"] = design.spacings;
  }
  json sampler_json{{"type", sampler.type},
                    {"iterations", sampler.iterations},
                    {"burn_in", sampler.burn_in},
                    {"seeds", sampler.seeds},
                    {"step_scale", sampler.step_scale}};
  if (!sampler.start.empty()) sampler_json["start"] = sampler.start;
  if (!sampler.start_alt.empty()) sampler_json["start_alt"] = sampler.start_alt;
  return {{"experiment", experiment},
          {"truth", truth},
          {"physics",
           {{"contrast", contrast},
            {"inclusion_radius", inclusion_radius},
            {"anomaly_radius", anomaly_radius},
            {"domain_radius", domain_radius}}},
          {"parameter_interval", parameter_interval},
          {"design", design_json},
          {"k", k},
          {"eta", eta},
          {"observations", {{"m", m}, {"sigma", sigma}, {"source", observation_source}}},
          {"data", {{"source", data_source}, {"seed", data_seed}}},
          {"sampler", sampler_json},
          {"exact", {{"mode", exact_mode}, {"fem_max_iterations", fem_in_loop_max_iterations}}},
          {"mesh", {{"target_h", target_h}, {"refinements", refinements}}},
          {"analysis", {{"bins", bins}}},
          {"threads", threads},
          {"output", output}};
}

inline void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ConfigError(message);
  };
  const bool one_d = experiment == "conductivity" || experiment == "radius";
  require(one_d || experiment == "anomaly", "unknown experiment '" + experiment + "'");
  require(truth.size() == dimension(), "truth must have " + std::to_string(dimension()) + " component(s)");
  require(domain_radius > 0.0, "domain_radius must be positive");
  if (one_d) {
    require(parameter_interval[0] < parameter_interval[1], "parameter_interval must be increasing");
    require(truth[0] >= parameter_interval[0] && truth[0] <= parameter_interval[1], "truth outside parameter_interval");
    if (experiment == "conductivity") {
      require(parameter_interval[0] > -1.0, "contrast interval must stay above -1");
      require(inclusion_radius > 0.0 && inclusion_radius <= domain_radius, "inclusion_radius must lie in (0, domain]");
    } else {
      require(contrast > -1.0, "contrast must exceed -1");
      require(parameter_interval[0] >= 0.0 && parameter_interval[1] <= domain_radius,
              "radius interval must lie in [0, domain_radius]");
    }
    require(design.generator == "dyadic", "1-d experiments use the dyadic design generator");
  } else {
    require(anomaly_radius > 0.0 && anomaly_radius < domain_radius, "anomaly_radius must lie in (0, domain_radius)");
    require(contrast > -1.0, "contrast must exceed -1");
    require(std::hypot(truth[0], truth[1]) <= domain_radius - anomaly_radius, "truth center outside admissible disk");
    require(design.generator == "triangular" || design.generator == "grid",
            "anomaly experiment uses the triangular or grid design generator");
    require(observation_source == "fem" && data_source == "fem",
            "anomaly experiment has no analytic forward map; use fem sources");
    require(exact_mode != "oracle", "anomaly experiment has no analytic forward map; exact mode must be fem or none");
  }
  require(design.count() > 0, "design needs at least one level or spacing");
  for (int l : design.levels) require(l >= 1 && l <= 24, "dyadic levels must lie in [1, 24]");
  for (double s : design.spacings) require(s > 0.0, "lattice spacings must be positive");
  require(k >= 1, "k must be at least 1");
  require(eta > 0.0, "eta must be positive");
  require(m >= 1, "need at least one observation point");
  require(sigma > 0.0, "sigma must be positive");
  for (const auto& source : {observation_source, data_source}) {
    require(source == "oracle" || source == "fem", "sources must be oracle or fem");
  }
  if (observation_source == "oracle" || data_source == "oracle" || exact_mode == "oracle") {
    require(domain_radius == 1.0, "the analytic oracle covers the unit disk only");
  }
  require(exact_mode == "oracle" || exact_mode == "fem" || exact_mode == "none", "exact mode must be oracle, fem, or none");
  require(sampler.type == "twalk" || sampler.type == "rwm", "sampler type must be twalk or rwm");
  require(sampler.iterations >= 1, "sampler needs at least one iteration");
  require(sampler.burn_in < sampler.iterations, "burn_in must be smaller than iterations");
  require(!sampler.seeds.empty(), "sampler needs at least one seed");
  require(sampler.start.empty() || sampler.start.size() == dimension(), "sampler.start has the wrong dimension");
  require(sampler.start_alt.empty() || sampler.start_alt.size() == dimension(),
          "sampler.start_alt has the wrong dimension");
  require(sampler.step_scale >= 0.0, "step_scale must be nonnegative");
  require(target_h > 0.0 && target_h < domain_radius, "mesh target_h must lie in (0, domain_radius)");
  require(refinements >= 0 && refinements <= 4, "mesh refinements must lie in [0, 4]");
  require(bins >= 10, "analysis needs at least 10 bins");
}

/// Parses a JSON config file; `//` comments are allowed.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
  return ExperimentConfig::from_json(j);
}

/// Flux x1^4 - 6 x1^2 x2^2 + x2^4 = Re (x1 + i x2)^4, equal to cos(4 theta) on the unit circle.
inline FluxFunction quartic_flux() {
  return [](const Vec2& x) {
    const double a = x[0] * x[0];
    const double b = x[1] * x[1];
    return a * a - 6.0 * a * b + b * b;
  };
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// One experiment's physics, forward maps, designs, and samplers.
template <std::size_t D>
class Experiment {
 public:
  explicit Experiment(ExperimentConfig config) : config_(std::move(config)) {
    config_.validate();
    if (config_.dimension() != D) throw ConfigError("experiment dimension mismatch");
    if constexpr (D == 1) {
      model_ = config_.experiment == "conductivity"
                   ? models::conductivity(config_.parameter_interval[0], config_.parameter_interval[1])
                   : models::radius(config_.contrast, config_.parameter_interval[0], config_.parameter_interval[1]);
      flux_ = cosine_flux(4);
    } else {
      model_ = models::anomaly(config_.contrast, config_.anomaly_radius, config_.domain_radius);
      flux_ = quartic_flux();
    }
    points_ = circle_points(config_.m, config_.domain_radius);
    Mesh mesh = generate_disk_mesh(config_.domain_radius, config_.target_h);
    for (int i = 0; i < config_.refinements; ++i) mesh = refine_uniform(mesh);
    mesh_ = std::make_shared<const Mesh>(std::move(mesh));
    evaluator_ = std::make_shared<const PointEvaluator>(*mesh_, points_);
  }

  const ExperimentConfig& config() const { return config_; }
  const ModelStructure<D>& model() const { return model_; }
  const std::vector<Vec2>& observation_points() const { return points_; }
  std::shared_ptr<const Mesh> mesh() const { return mesh_; }
  const FluxFunction& flux() const { return flux_; }

  ConductivityField field(const Point<D>& theta) const {
    ConductivityField f;
    if constexpr (D == 1) {
      if (config_.experiment == "conductivity") {
        f.inclusions.push_back({{0.0, 0.0}, config_.inclusion_radius, theta[0]});
      } else {
        f.inclusions.push_back({{0.0, 0.0}, theta[0], config_.contrast});
      }
    } else {
      f.inclusions.push_back({{theta[0], theta[1]}, config_.anomaly_radius, config_.contrast});
    }
    return f;
  }

  FieldSolution fem_solve(const Point<D>& theta) const { return solve_forward(mesh_, field(theta), flux_); }

  std::vector<double> fem_observations(const Point<D>& theta) const {
    return evaluator_->apply(fem_solve(theta).nodal_values);
  }

  std::vector<double> oracle_observations(const Point<D>& theta) const {
    if constexpr (D == 1) {
      std::vector<double> out;
      out.reserve(points_.size());
      const bool contrast_unknown = config_.experiment == "conductivity";
      const double rho = contrast_unknown ? theta[0] : config_.contrast;
      const double R = contrast_unknown ? config_.inclusion_radius : theta[0];
      for (const auto& p : points_) out.push_back(oracle::exact_boundary_cos4(rho, R, std::atan2(p[1], p[0])));
      return out;
    } else {
      (void)theta;
      throw InvalidArgument("no analytic forward map for the anomaly experiment");
    }
  }

  ForwardMap<D> forward(const std::string& source) const {
    if (source == "oracle") return [this](const Point<D>& t) { return oracle_observations(t); };
    return [this](const Point<D>& t) { return fem_observations(t); };
  }

  /// Exact solve at a design point: observations from the configured source, F from the FEM solution.
  ForwardSampler<D> design_sampler(bool keep_solutions) const {
    return [this, keep_solutions](const Point<D>& theta) {
      const FieldSolution sol = fem_solve(theta);
      ForwardSample s;
      s.observations =
          config_.observation_source == "oracle" ? oracle_observations(theta) : evaluator_->apply(sol.nodal_values);
      s.functional = functional_value(sol, model_.functional);
      if (keep_solutions) s.solution = sol.nodal_values;
      return s;
    };
  }

  std::size_t design_count() const { return config_.design.count(); }

  Design<D> design(std::size_t i) const {
    const auto& spec = config_.design;
    if constexpr (D == 1) {
      return build_design_dyadic_1d(config_.parameter_interval[0], config_.parameter_interval[1], spec.levels.at(i));
    } else {
      return spec.generator == "triangular"
                 ? build_design_triangular_2d(config_.domain_radius, config_.anomaly_radius, spec.spacings.at(i))
                 : build_design_grid_2d(config_.domain_radius, config_.anomaly_radius, spec.spacings.at(i));
    }
  }

  std::string design_tag(std::size_t i) const {
    const auto& spec = config_.design;
    if (spec.generator == "dyadic") return "l" + std::to_string(spec.levels.at(i));
    std::ostringstream tag;
    tag << spec.generator << "_s" << spec.spacings.at(i);
    return tag.str();
  }

  /// Hash of every setting that influences stored values.
  std::string provenance(std::size_t i) const {
    const json settings{{"experiment", config_.experiment},
                        {"physics",
                         {config_.contrast, config_.inclusion_radius, config_.anomaly_radius, config_.domain_radius}},
                        {"interval", config_.parameter_interval},
                        {"design", design_tag(i)},
                        {"m", config_.m},
                        {"observation_source", config_.observation_source},
                        {"mesh", {config_.target_h, config_.refinements}}};
    return hex64(fnv1a(settings.dump()));
  }

  SurrogateStore<D> build_store(std::size_t i, bool keep_solutions = false) const {
    const auto d = design(i);
    if (static_cast<std::size_t>(config_.k) > d.size()) {
      throw ConfigError("k = " + std::to_string(config_.k) + " exceeds the size of design " + design_tag(i));
    }
    PreprocessOptions options;
    options.threads = config_.threads;
    options.k_default = config_.k;
    options.eta = config_.eta;
    options.provenance = provenance(i);
    options.keep_solutions = keep_solutions;
    options.mesh = mesh_;
    return preprocess(d, model_, design_sampler(keep_solutions), options);
  }

  Observation synthetic_data() const {
    return generate_synthetic_data<D>(truth(), forward(config_.data_source), points_, config_.sigma, config_.data_seed);
  }

  Point<D> truth() const {
    Point<D> t;
    std::copy(config_.truth.begin(), config_.truth.end(), t.begin());
    return t;
  }

  PosteriorSpec<D> posterior(ForwardMap<D> forward_map, Observation obs) const {
    return {std::move(forward_map), model_.domain, std::move(obs)};
  }

  ForwardMap<D> surrogate_forward(std::shared_ptr<const SurrogateStore<D>> store) const {
    const auto k = static_cast<std::size_t>(config_.k);
    const double eta = config_.eta;
    return [store, k, eta](const Point<D>& t) { return evaluate_surrogate(t, *store, k, eta); };
  }

  /// Configured starting points, or two independent prior draws from a seed-derived stream.
  std::pair<Point<D>, Point<D>> starting_points(std::uint64_t seed) const {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&] {
      Point<D> p;
      if constexpr (D == 1) {
        p[0] = model_.domain.lo + (model_.domain.hi - model_.domain.lo) * u(rng);
      } else {
        const double r = model_.domain.radius * std::sqrt(u(rng));
        const double a = 2.0 * std::numbers::pi * u(rng);
        p = {r * std::cos(a), r * std::sin(a)};
      }
      return p;
    };
    auto from = [](const std::vector<double>& v) {
      Point<D> p;
      std::copy(v.begin(), v.end(), p.begin());
      return p;
    };
    Point<D> a = draw();
    Point<D> b = draw();
    if (!config_.sampler.start.empty()) a = from(config_.sampler.start);
    if (!config_.sampler.start_alt.empty()) b = from(config_.sampler.start_alt);
    return {a, b};
  }

  Chain<D> sample(const LogDensity<D>& log_density, std::uint64_t seed, std::size_t iterations) const {
    const auto [a, b] = starting_points(seed);
    Chain<D> chain;
    if (config_.sampler.type == "twalk") {
      chain = twalk_sample<D>(log_density, a, b, iterations, seed);
    } else {
      double step = config_.sampler.step_scale;
      if (step == 0.0) {
        step = 0.1 * (D == 1 ? model_.domain.hi - model_.domain.lo : 2.0 * model_.domain.radius);
      }
      chain = rwm_sample<D>(log_density, a, iterations, step, seed);
    }
    chain.burn_in = config_.sampler.burn_in;
    const std::size_t skip = effective_burn_in(chain.size());
    try {
      chain.iat = chain_iat(chain, skip);
    } catch (const ChainTooShort&) {
    } catch (const DegenerateChain&) {
    }
    return chain;
  }

  /// Configured burn-in, or half the chain when the chain is shorter than that.
  std::size_t effective_burn_in(std::size_t length) const {
    return config_.sampler.burn_in < length ? config_.sampler.burn_in : length / 2;
  }

  BinBox<D> prior_box() const {
    BinBox<D> box;
    if constexpr (D == 1) {
      box.lo = {model_.domain.lo};
      box.hi = {model_.domain.hi};
    } else {
      box.lo = {-model_.domain.radius, -model_.domain.radius};
      box.hi = {model_.domain.radius, model_.domain.radius};
    }
    return box;
  }

  /// Parameter samples covering the domain for error-bound sweeps.
  std::vector<Point<D>> domain_samples() const {
    if constexpr (D == 1) {
      return grid_samples(model_.domain.lo, model_.domain.hi, 2001);
    } else {
      return disk_samples(model_.domain.radius, model_.domain.radius / 60.0);
    }
  }

 private:
  ExperimentConfig config_;
  ModelStructure<D> model_;
  FluxFunction flux_;
  std::vector<Vec2> points_;
  std::shared_ptr<const Mesh> mesh_;
  std::shared_ptr<const PointEvaluator> evaluator_;
};

struct EpsilonSummary {
  std::size_t n = 0;
  double c_f = 0.0;             // max stored F, the estimate of sup F over the domain
  double max_kth_g = 0.0;       // max over the sweep of G to the k-th neighbor
  double covering_bound = 0.0;   // C * c_f * max_kth_g
  double max_eps = 0.0;         // max over the sweep of eps_theta
  double mean_eps = 0.0;
  double eps_at_truth = 0.0;
};

template <std::size_t D>
EpsilonSummary epsilon_summary(const SurrogateStore<D>& store, std::span<const Point<D>> samples,
                               const Point<D>& truth, std::size_t k) {
  EpsilonSummary s;
  s.n = store.size();
  s.c_f = *std::max_element(store.functional_values.begin(), store.functional_values.end());
  double total = 0.0;
  for (const auto& t : samples) {
    const double e = error_bound(t, store, k, store.eta).residual;
    s.max_eps = std::max(s.max_eps, e);
    total += e;
  }
  s.mean_eps = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
  s.eps_at_truth = error_bound(truth, store, k, store.eta).residual;
  const auto report =
      verify_design_approximation<D>(store.design, samples, store.model.G, s.c_f, store.model.C, k, 0.0);
  s.max_kth_g = report.max_kth_g;
  s.covering_bound = report.observed_bound;
  return s;
}

struct SpeedMeasurement {
  double surrogate_seconds = 0.0;  // per evaluate_surrogate call
  double fem_seconds = 0.0;        // per assemble-and-solve
  double ratio() const { return fem_seconds / surrogate_seconds; }
};

/// Wall-clock cost of one surrogate evaluation against one FEM solve at the experiment mesh.
template <std::size_t D>
SpeedMeasurement measure_speed(const Experiment<D>& exp, const SurrogateStore<D>& store, std::size_t evaluations = 20000,
                               std::size_t solves = 3) {
  const auto k = static_cast<std::size_t>(exp.config().k);
  const auto samples = exp.domain_samples();
  SpeedMeasurement out;
  double sink = 0.0;
  auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < evaluations; ++i) {
    sink += evaluate_surrogate(samples[i % samples.size()], store, k, exp.config().eta)[0];
  }
  out.surrogate_seconds = seconds_since(start) / static_cast<double>(evaluations);
  start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < solves; ++i) sink += exp.fem_observations(samples[(7 * i + 3) % samples.size()])[0];
  out.fem_seconds = seconds_since(start) / static_cast<double>(solves);
  if (std::isnan(sink)) std::clog << "warning: non-finite value in timing loop\n";
  return out;
}

/// Reference eps for dyadic designs of the 1-d experiments; carried as report metadata only.
inline std::optional<double> reference_eps(const std::string& experiment, int level) {
  if (experiment == "conductivity") return 30.0 / std::pow(2.0, level);
  if (experiment == "radius") return std::pow(3.0 / std::pow(2.0, level), 0.25);
  return std::nullopt;
}

namespace detail {

namespace fs = std::filesystem;

inline std::string store_file(const std::string& tag) { return "store_" + tag + ".pbsm"; }
inline std::string chain_name(const std::string& tag, std::uint64_t seed) { return tag + "_seed" + std::to_string(seed); }
inline std::string chain_file(const std::string& name) { return "chain_" + name + ".csv"; }

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string() + " not found");
  return json::parse(in);
}

inline void merge_json(const fs::path& path, const json& update) {
  json current = fs::exists(path) ? read_json(path) : json::object();
  current.update(update);
  write_json(path, current);
}

inline json observation_json(const Observation& obs, const std::vector<double>& truth, const ExperimentConfig& c) {
  json points = json::array();
  for (const auto& p : obs.points) points.push_back({p[0], p[1]});
  return {{"truth", truth}, {"sigma", obs.sigma}, {"seed", c.data_seed}, {"source", c.data_source},
          {"points", points}, {"y", obs.y}};
}

inline Observation observation_from_json(const json& j) {
  Observation obs;
  obs.y = j.at("y").get<std::vector<double>>();
  obs.sigma = j.at("sigma").get<double>();
  for (const auto& p : j.at("points")) obs.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  obs.validate();
  return obs;
}

template <std::size_t D>
void save_chain(const fs::path& path, const Chain<D>& chain) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_chain(out, chain);
}

template <std::size_t D>
Chain<D> load_chain(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("chain " + path.string() + " not found; run the sample stage first");
  return read_chain<D>(in);
}

template <std::size_t D>
void preprocess_stage(const Experiment<D>& exp, bool force) {
  const fs::path out = exp.config().output;
  fs::create_directories(out);
  write_json(out / "config.json", exp.config().to_json());
  json timing;
  for (std::size_t i = 0; i < exp.design_count(); ++i) {
    const auto tag = exp.design_tag(i);
    const fs::path path = out / store_file(tag);
    if (fs::exists(path) && !force) {
      std::clog << "store " << path.string() << " exists, skipping\n";
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    const auto store = exp.build_store(i);
    timing[tag] = {{"seconds", seconds_since(start)}, {"n", store.size()}};
    save_store(path, store);
    std::clog << "wrote " << path.string() << " (n = " << store.size() << ")\n";
  }
  if (!timing.is_null()) merge_json(out / "timing_preprocess.json", timing);
}

template <std::size_t D>
Observation data_stage(const Experiment<D>& exp, bool force) {
  const fs::path path = fs::path(exp.config().output) / "data.json";
  if (fs::exists(path) && !force) return observation_from_json(read_json(path));
  const auto obs = exp.synthetic_data();
  write_json(path, observation_json(obs, exp.config().truth, exp.config()));
  return obs;
}

template <std::size_t D>
void sampling_stage(const Experiment<D>& exp, bool force) {
  const auto& c = exp.config();
  const fs::path out = c.output;
  fs::create_directories(out);
  const Observation obs = data_stage(exp, force);

  struct Job {
    std::string name;
    ForwardMap<D> forward;
    std::uint64_t seed;
    std::size_t iterations;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < exp.design_count(); ++i) {
    const auto tag = exp.design_tag(i);
    const fs::path store_path = out / store_file(tag);
    if (!fs::exists(store_path)) {
      throw MissingArtifact("surrogate store " + store_path.string() + " not found; run the preprocess stage first");
    }
    auto store = std::make_shared<const SurrogateStore<D>>(load_store<D>(store_path));
    for (auto seed : c.sampler.seeds) jobs.push_back({chain_name(tag, seed), exp.surrogate_forward(store), seed, c.sampler.iterations});
  }
  if (c.exact_mode != "none") {
    std::size_t iterations = c.sampler.iterations;
    if (c.exact_mode == "fem" && iterations > c.fem_in_loop_max_iterations) {
      std::clog << "warning: FEM-in-the-loop chain capped at " << c.fem_in_loop_max_iterations << " iterations\n";
      iterations = c.fem_in_loop_max_iterations;
    }
    for (auto seed : c.sampler.seeds) jobs.push_back({chain_name("exact", seed), exp.forward(c.exact_mode), seed, iterations});
  }

  std::erase_if(jobs, [&](const Job& job) {
    const bool skip = fs::exists(out / chain_file(job.name)) && !force;
    if (skip) std::clog << "chain " << job.name << " exists, skipping\n";
    return skip;
  });
  std::mutex timing_mutex;
  json timing;
  parallel_for(jobs.size(), c.threads, [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto start = std::chrono::steady_clock::now();
    const auto chain = exp.sample(make_log_density(exp.posterior(job.forward, obs)), job.seed, job.iterations);
    const double seconds = seconds_since(start);
    save_chain(out / chain_file(job.name), chain);
    std::lock_guard lock(timing_mutex);
    timing[job.name] = {{"seconds", seconds}, {"iterations", job.iterations}};
    std::clog << "wrote chain " << job.name << " (acceptance " << chain.acceptance_rate << ")\n";
  });
  if (!timing.is_null()) merge_json(out / "timing_sampling.json", timing);
}

template <std::size_t D>
void analysis_stage(const Experiment<D>& exp) {
  const auto& c = exp.config();
  const fs::path out = c.output;
  const std::vector<double> probs{0.05, 0.5, 0.95};

  std::vector<std::string> names;
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < exp.design_count(); ++i) {
    tags.push_back(exp.design_tag(i));
    for (auto seed : c.sampler.seeds) names.push_back(chain_name(tags.back(), seed));
  }
  if (c.exact_mode != "none") {
    for (auto seed : c.sampler.seeds) names.push_back(chain_name("exact", seed));
  }
  std::vector<Chain<D>> chains;
  for (const auto& name : names) chains.push_back(load_chain<D>(out / chain_file(name)));

  auto tail = [&](const Chain<D>& chain) {
    return std::span<const Point<D>>(chain.samples).subspan(exp.effective_burn_in(chain.size()));
  };

  json report;
  report["experiment"] = c.experiment;
  report["truth"] = c.truth;
  json chain_reports = json::object();
  std::ofstream hist(out / "histograms.csv");
  hist << "chain,component,bin_lo,bin_hi,mass\n";
  const auto box = exp.prior_box();
  for (std::size_t i = 0; i < chains.size(); ++i) {
    const auto& chain = chains[i];
    const auto samples = tail(chain);
    json entry{{"samples", samples.size()}, {"acceptance", chain.acceptance_rate}, {"seed", chain.seed}};
    entry["iat"] = chain.iat ? json(*chain.iat) : json(nullptr);
    json q = json::array();
    for (std::size_t j = 0; j < D; ++j) {
      std::vector<double> values;
      for (const auto& p : samples) values.push_back(p[j]);
      q.push_back(quantiles(values, probs));
      std::vector<Point<1>> marginal;
      for (double v : values) marginal.push_back({v});
      const BinBox<1> axis{{box.lo[j]}, {box.hi[j]}};
      const auto mass = histogram<1>(marginal, c.bins, axis);
      const double width = (box.hi[j] - box.lo[j]) / static_cast<double>(c.bins);
      for (std::size_t b = 0; b < c.bins; ++b) {
        hist << names[i] << ',' << j << ',' << format_real(box.lo[j] + width * b) << ','
             << format_real(box.lo[j] + width * (b + 1)) << ',' << format_real(mass[b]) << '\n';
      }
    }
    entry["quantiles"] = q;
    chain_reports[names[i]] = entry;
  }
  report["quantile_levels"] = probs;
  report["chains"] = chain_reports;

  json matrix = json::array();
  for (std::size_t a = 0; a < chains.size(); ++a) {
    json row = json::array();
    for (std::size_t b = 0; b < chains.size(); ++b) row.push_back(histogram_tv<D>(tail(chains[a]), tail(chains[b]), c.bins, box));
    matrix.push_back(row);
  }
  report["tv"] = {{"names", names}, {"bins_per_axis", c.bins}, {"matrix", matrix}};
  if (c.exact_mode != "none") {
    json to_exact = json::object();
    const std::size_t exact_offset = names.size() - c.sampler.seeds.size();
    for (std::size_t i = 0; i < exact_offset; ++i) {
      const std::size_t e = exact_offset + (i % c.sampler.seeds.size());
      to_exact[names[i]] = matrix[i][e];
    }
    report["tv_to_exact"] = to_exact;
  }

  json eps = json::object();
  const auto sweep = exp.domain_samples();
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const auto store = load_store<D>(out / store_file(tags[i]));
    const auto s = epsilon_summary<D>(store, sweep, exp.truth(), static_cast<std::size_t>(c.k));
    json entry{{"n", s.n},           {"C", store.model.C},          {"C_F", s.c_f},
               {"max_kth_G", s.max_kth_g}, {"C_CF_eps", s.covering_bound}, {"max_eps_theta", s.max_eps},
               {"mean_eps_theta", s.mean_eps}, {"eps_theta_at_truth", s.eps_at_truth}};
    if (c.design.generator == "dyadic") {
      if (auto ref = reference_eps(c.experiment, c.design.levels[i])) entry["reference_eps"] = *ref;
    }
    json at_median = json::object();
    for (std::size_t j = 0; j < c.sampler.seeds.size(); ++j) {
      const auto& q = chain_reports[chain_name(tags[i], c.sampler.seeds[j])]["quantiles"];
      Point<D> median;
      for (std::size_t d = 0; d < D; ++d) median[d] = q[d][1].template get<double>();
      at_median[std::to_string(c.sampler.seeds[j])] = error_bound(median, store, static_cast<std::size_t>(c.k), store.eta).residual;
    }
    entry["eps_theta_at_median"] = at_median;
    eps[tags[i]] = entry;
  }
  report["error_bounds"] = eps;

  if constexpr (D == 2) {
    for (std::size_t i = 0; i < chains.size(); ++i) {
      const auto samples = tail(chains[i]);
      const auto spacing = static_cast<std::size_t>(std::ceil(chains[i].iat.value_or(1.0)));
      std::ofstream rec(out / ("reconstruction_" + names[i] + ".csv"));
      rec << "# last samples at IAT spacing " << spacing << "\nx,y,r\n";
      std::size_t written = 0;
      for (std::size_t back = 0; written < 500 && back < samples.size(); back += spacing, ++written) {
        const auto& p = samples[samples.size() - 1 - back];
        rec << format_real(p[0]) << ',' << format_real(p[1]) << ',' << format_real(c.anomaly_radius) << '\n';
      }
    }
  }

  write_json(out / "report.json", report);

  std::ofstream txt(out / "report.txt");
  txt << std::fixed;
  txt << "experiment " << c.experiment << ", truth";
  for (double t : c.truth) txt << ' ' << t;
  txt << "\n\nchain                      q05        median     q95        IAT      accept   TV-exact\n";
  for (const auto& name : names) {
    const auto& e = chain_reports[name];
    for (std::size_t d = 0; d < D; ++d) {
      txt << std::left << std::setw(24) << (d == 0 ? name : "") << std::right;
      for (std::size_t qi = 0; qi < 3; ++qi) txt << std::setw(11) << std::setprecision(4) << e["quantiles"][d][qi].get<double>();
      if (d == 0) {
        txt << std::setw(9) << std::setprecision(2) << (e["iat"].is_null() ? 0.0 : e["iat"].get<double>());
        txt << std::setw(9) << std::setprecision(3) << e["acceptance"].get<double>();
        if (report.contains("tv_to_exact") && report["tv_to_exact"].contains(name)) {
          txt << std::setw(11) << std::setprecision(4) << report["tv_to_exact"][name].get<double>();
        }
      }
      txt << '\n';
    }
  }
  txt << "\ndesign           n    C_F        max kth G  C*C_F*eps  max eps    eps(truth)\n";
  for (const auto& tag : tags) {
    const auto& e = eps[tag];
    txt << std::left << std::setw(14) << tag << std::right << std::setw(6) << e["n"].get<std::size_t>();
    for (const char* key : {"C_F", "max_kth_G", "C_CF_eps", "max_eps_theta", "eps_theta_at_truth"}) {
      txt << std::setw(11) << std::setprecision(4) << e[key].get<double>();
    }
    txt << '\n';
  }

  // timing: kept out of report.json so that reports of identical runs are byte-identical
  json timing;
  for (const char* file : {"timing_preprocess.json", "timing_sampling.json"}) {
    if (fs::exists(out / file)) timing[file] = read_json(out / file);
  }
  if (!tags.empty()) {
    const auto store = load_store<D>(out / store_file(tags.back()));
    const auto speed = measure_speed(exp, store);
    timing["speed"] = {{"design", tags.back()},
                       {"surrogate_seconds_per_eval", speed.surrogate_seconds},
                       {"fem_seconds_per_solve", speed.fem_seconds},
                       {"ratio", speed.ratio()}};
  }
  std::ofstream time_txt(out / "timing.txt");
  time_txt << timing.dump(2) << '\n';
}

template <typename Fn>
void dispatch(const ExperimentConfig& config, Fn&& fn) {
  if (config.dimension() == 1) {
    fn(Experiment<1>(config));
  } else {
    fn(Experiment<2>(config));
  }
}

}  // namespace detail

inline void run_preprocess(const ExperimentConfig& config, bool force = false) {
  detail::dispatch(config, [&](const auto& exp) { detail::preprocess_stage(exp, force); });
}

inline void run_sampling(const ExperimentConfig& config, bool force = false) {
  detail::dispatch(config, [&](const auto& exp) { detail::sampling_stage(exp, force); });
}

inline void run_analysis(const ExperimentConfig& config) {
  detail::dispatch(config, [&](const auto& exp) { detail::analysis_stage(exp); });
}

/// All three stages; existing artifacts are kept unless force is set.
inline void run_full(const ExperimentConfig& config, bool force = false) {
  detail::dispatch(config, [&](const auto& exp) {
    detail::preprocess_stage(exp, force);
    detail::sampling_stage(exp, force);
    if (force || !std::filesystem::exists(std::filesystem::path(config.output) / "report.json")) {
      detail::analysis_stage(exp);
    } else {
      std::clog << "report exists, skipping analysis\n";
    }
  });
}

}  // namespace pbsm
