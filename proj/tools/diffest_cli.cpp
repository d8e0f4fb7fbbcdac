// Command-line driver: twin-experiment simulation, covariance calibration,
// diffusivity estimation, and parameter sweeps.

#include <CLI11.hpp>

#include <string>

#include "diffest/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"diffest: time-dependent diffusivity estimation for the "
               "stochastically forced periodic heat equation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::string measurements_path, targets_path, sweep_path;
  diffest::CliOverrides overrides;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")
        ->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&overrides](std::uint64_t v) { overrides.seed = v; },
        "override the config seed");
    cmd->add_option_function<int>(
        "--max-iters", [&overrides](int v) { overrides.max_iters = v; },
        "override the outer iteration cap");
    cmd->add_option_function<double>(
        "--tol", [&overrides](double v) { overrides.tol = v; },
        "override the convergence tolerance");
    cmd->add_option_function<int>(
        "--measure-every",
        [&overrides](int v) { overrides.measure_every = v; },
        "override the measurement cadence (steps)");
  };

  CLI::App* simulate =
      app.add_subcommand("simulate", "generate synthetic truth and data");
  add_common(simulate);

  CLI::App* estimate =
      app.add_subcommand("estimate", "run the iterated smoother on data");
  add_common(estimate);
  estimate
      ->add_option("--measurements", measurements_path,
                   "measurements.tsv produced by simulate")
      ->required();

  CLI::App* calibrate =
      app.add_subcommand("calibrate", "fit noise spectra and hyperdiffusion");
  add_common(calibrate);
  calibrate
      ->add_option("--targets", targets_path,
                   "stationary-variance targets (JSON)")
      ->required();

  CLI::App* sweep =
      app.add_subcommand("sweep", "repeat a twin experiment over a parameter");
  add_common(sweep);
  sweep->add_option("--sweep", sweep_path, "sweep specification (JSON)")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (simulate->parsed())
    return diffest::cmd_simulate(config_path, out_dir, overrides);
  if (estimate->parsed())
    return diffest::cmd_estimate(config_path, measurements_path, out_dir,
                                 overrides);
  if (calibrate->parsed())
    return diffest::cmd_calibrate(config_path, targets_path, out_dir,
                                  overrides);
  if (sweep->parsed())
    return diffest::cmd_sweep(config_path, sweep_path, out_dir, overrides);
  return 1;
}
