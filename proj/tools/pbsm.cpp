// Command-line front end for the experiment pipeline.
//
// Exit codes: 0 success, 1 verify-design found a design that misses eps, 2 configuration error or
// missing artifact, 3 numeric failure.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pbsm/experiments.hpp"

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& common, bool with_seed, bool with_force) {
  cmd->add_option("--config", common.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--output", common.output, "output directory (overrides the config)");
  if (with_seed) cmd->add_option("--seed", common.seed, "run a single chain with this seed");
  if (with_force) cmd->add_flag("--force", common.force, "overwrite existing artifacts");
}

pbsm::ExperimentConfig resolve(const Common& common) {
  auto config = pbsm::load_config(common.config_path);
  if (common.output) config.output = *common.output;
  if (common.seed) config.sampler.seeds = {*common.seed};
  return config;
}

template <std::size_t D>
bool verify(const pbsm::Experiment<D>& exp, std::optional<double> eps) {
  const auto samples = exp.domain_samples();
  const auto k = static_cast<std::size_t>(exp.config().k);
  bool all_pass = true;
  std::printf("%-18s %7s %14s %14s %s\n", "design", "n", "max kth G", "eps", "result");
  for (std::size_t i = 0; i < exp.design_count(); ++i) {
    const auto design = exp.design(i);
    std::optional<double> target = eps;
    if (!target && exp.config().design.generator == "dyadic") {
      target = pbsm::reference_eps(exp.config().experiment, exp.config().design.levels[i]);
    }
    const auto report = pbsm::verify_design_approximation<D>(design, samples, exp.model().G, 1.0, exp.model().C, k,
                                                             target.value_or(0.0));
    const char* result = target ? (report.passes ? "pass" : "FAIL") : "-";
    if (target && !report.passes) all_pass = false;
    std::printf("%-18s %7zu %14.8g %14.8g %s\n", exp.design_tag(i).c_str(), design.size(), report.max_kth_g,
                target.value_or(std::nan("")), result);
  }
  return all_pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-based surrogate Bayesian inversion for EIT on a disk"};
  app.require_subcommand(1);

  Common common;
  auto* preprocess = app.add_subcommand("preprocess", "solve the forward problem at every design point");
  add_common(preprocess, common, false, true);
  auto* sample = app.add_subcommand("sample", "run MCMC chains against stored surrogates and the exact map");
  add_common(sample, common, true, true);
  auto* analyze = app.add_subcommand("analyze", "write quantiles, histograms, TV table, and error bounds");
  add_common(analyze, common, true, false);
  auto* run = app.add_subcommand("run", "preprocess, sample, and analyze");
  add_common(run, common, true, true);

  auto* verify_cmd = app.add_subcommand("verify-design", "check the eps-approximation property of each design");
  add_common(verify_cmd, common, false, false);
  std::optional<double> eps;
  verify_cmd->add_option("--eps", eps, "target eps (default: reference value for dyadic designs)");

  auto* oracle_cmd = app.add_subcommand("oracle", "print analytic boundary values for a centered inclusion");
  double rho = 3.2;
  double radius = 0.85;
  std::size_t m = 10;
  oracle_cmd->add_option("--rho", rho, "inclusion contrast")->capture_default_str();
  oracle_cmd->add_option("--R", radius, "inclusion radius")->capture_default_str();
  oracle_cmd->add_option("--m", m, "number of equispaced boundary points")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*oracle_cmd) {
      for (const auto& p : pbsm::circle_points(m, 1.0)) {
        const double theta = std::atan2(p[1], p[0]);
        std::printf("%.17g %.17g\n", theta, pbsm::oracle::exact_boundary_cos4(rho, radius, theta));
      }
      return 0;
    }
    const auto config = resolve(common);
    if (*preprocess) pbsm::run_preprocess(config, common.force);
    if (*sample) pbsm::run_sampling(config, common.force);
    if (*analyze) pbsm::run_analysis(config);
    if (*run) pbsm::run_full(config, common.force);
    if (*verify_cmd) {
      bool ok = true;
      pbsm::detail::dispatch(config, [&](const auto& exp) { ok = verify(exp, eps); });
      return ok ? 0 : 1;
    }
    return 0;
  } catch (const pbsm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const pbsm::MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 2;
  } catch (const pbsm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
