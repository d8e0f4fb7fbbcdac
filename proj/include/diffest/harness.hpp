#pragma once

// Experiment orchestration behind the CLI: scenario execution, artifact
// persistence, and the run manifest. Commands return process exit codes
// (0 ok, 2 config, 3 data, 4 calibration, 5 numerical divergence).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "diffest/calibration.hpp"
#include "diffest/io.hpp"
#include "diffest/mean_field.hpp"
#include "diffest/simulator.hpp"
#include "diffest/stationary.hpp"

namespace diffest {

namespace fs = std::filesystem;

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> max_iters;
  std::optional<double> tol;
  std::optional<int> measure_every;

  void apply(RunSpec& spec) const {
    if (seed) spec.seed = *seed;
    if (max_iters) spec.estimate.max_iters = *max_iters;
    if (tol) spec.estimate.tol = *tol;
    if (measure_every) spec.measure_every = *measure_every;
  }
};

namespace harness_detail {

inline double elapsed_s(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       since)
      .count();
}

/// Relative space-time L2 error of the estimated kappa against a truth
/// trajectory given on the collocation grid.
inline double kappa_relative_error(
    const MeanTrajectory& means,
    const std::vector<Eigen::VectorXd>& truth_kappa_grid) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < means.theta_bar.size(); ++i) {
    const Eigen::VectorXd est =
        exp_diffusivity(means.theta_bar[i]).to_physical();
    const Eigen::VectorXd& tru = truth_kappa_grid[i];
    num += (est - tru).squaredNorm();
    den += tru.squaredNorm();
  }
  return std::sqrt(num / den);
}

inline std::optional<std::vector<Eigen::VectorXd>> read_kappa_truth(
    const fs::path& path, const ModelConfig& config) {
  if (!fs::exists(path)) return std::nullopt;
  std::ifstream in(path);
  if (!in) return std::nullopt;
  std::string line;
  if (!std::getline(in, line) ||
      line.rfind("# diffest/v1 kappa_truth", 0) != 0)
    throw DataError("'" + path.string() + "' is not a kappa_truth file");
  const int nf = config.field_dim();
  std::vector<Eigen::VectorXd> out;
  Eigen::VectorXd current(nf);
  int col = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, x, v;
    if (!(ss >> t >> x >> v))
      throw DataError("kappa_truth: malformed line");
    current(col++) = v;
    if (col == nf) {
      out.push_back(current);
      col = 0;
    }
  }
  if (col != 0 || static_cast<int>(out.size()) != config.n_steps + 1)
    throw DataError("kappa_truth: grid shape does not match the config");
  return out;
}

inline void warn_stability(const ModelConfig& config) {
  const double s = config.stability_number();
  if (s > 2.0)
    std::cerr << "note: stability number dt (kappa0 N^2 + mu1 N^4) = " << s
              << " (semi-implicit scheme; explicit mean evolution may be "
                 "marginal)\n";
}

}  // namespace harness_detail

// ---------------------------------------------------------------------
// simulate

inline void run_simulate(const RunSpec& spec, const fs::path& out_dir,
                         ManifestBuilder& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  harness_detail::warn_stability(spec.model);
  SimulationOptions opts;
  opts.refine = spec.truth_refine;
  const TruthTrajectory truth = simulate_truth(
      spec.model, spec.truth_kappa_fn(), spec.source_fn(), spec.seed, opts);
  const MeasurementSet measurements = synthesize_measurements(
      truth, spec.model, spec.measure_every, spec.seed + 1);

  fs::create_directories(out_dir);
  write_field_series(out_dir / "truth_temperature.tsv", "truth_temperature",
                     truth.times, truth.temperature);
  write_field_series(out_dir / "truth_theta.tsv", "truth_theta", truth.times,
                     truth.theta);
  {
    std::vector<SpectralField> kappa;
    kappa.reserve(truth.theta.size());
    for (const auto& th : truth.theta) kappa.push_back(exp_diffusivity(th));
    write_field_series(out_dir / "kappa_truth.tsv", "kappa_truth",
                       truth.times, kappa);
  }
  write_measurements(out_dir / "measurements.tsv", measurements);

  manifest.set("seeds", json{{"truth", spec.seed},
                             {"measurements", spec.seed + 1}});
  manifest.set("timings_s",
               json{{"total", harness_detail::elapsed_s(t0)}});
  manifest.set("stability_number", spec.model.stability_number());
  for (const char* name : {"truth_temperature.tsv", "truth_theta.tsv",
                           "kappa_truth.tsv", "measurements.tsv"})
    manifest.add_file(out_dir, name);
  manifest.write(out_dir);
}

// ---------------------------------------------------------------------
// estimate

struct EstimateSummary {
  ConvergenceReport report;
  std::vector<double> kappa_errors;  // per iteration, when truth available
  double final_kappa_error = -1.0;
};

inline EstimateSummary run_estimate(const RunSpec& spec,
                                    const fs::path& measurements_path,
                                    const fs::path& out_dir,
                                    ManifestBuilder& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  harness_detail::warn_stability(spec.model);
  const MeasurementSet measurements =
      read_measurements(measurements_path, spec.model);
  const auto truth_kappa = harness_detail::read_kappa_truth(
      measurements_path.parent_path() / "kappa_truth.tsv", spec.model);

  SpectralField source0 = spec.source_field(0.0);
  const auto source_at = [&spec](double t) { return spec.source_field(t); };

  EstimateSummary summary;
  OuterOptions options = spec.estimate;
  options.per_iteration_hook = [&](int iter, const MeanTrajectory& means,
                                   const IterationStats& stats) {
    if (truth_kappa)
      summary.kappa_errors.push_back(
          harness_detail::kappa_relative_error(means, *truth_kappa));
  };

  OuterResult result;
  try {
    result = run_outer_iteration(spec.model, measurements, source_at, options);
  } catch (const std::runtime_error& e) {
    throw DivergenceError(e.what());
  }
  summary.report = result.report;
  if (!summary.kappa_errors.empty())
    summary.final_kappa_error = summary.kappa_errors.back();

  fs::create_directories(out_dir);
  const int n_steps = spec.model.n_steps;
  Eigen::VectorXd times(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) times(i) = i * spec.model.dt;

  write_field_series(out_dir / "mean_temperature.tsv", "mean_temperature",
                     times, result.means.t_bar);
  {
    std::vector<SpectralField> kappa;
    kappa.reserve(result.means.theta_bar.size());
    for (const auto& th : result.means.theta_bar)
      kappa.push_back(exp_diffusivity(th));
    write_field_series(out_dir / "mean_kappa.tsv", "mean_kappa", times, kappa);
  }

  const int nf = spec.model.field_dim();
  std::vector<SpectralField> t_hat, theta_hat;
  t_hat.reserve(n_steps + 1);
  theta_hat.reserve(n_steps + 1);
  for (int i = 0; i <= n_steps; ++i) {
    const Eigen::VectorXd& mean = result.smoother.beliefs[i].mean;
    t_hat.push_back(unpack_hermitian(mean.head(nf)));
    theta_hat.push_back(result.means.theta_bar[i] +
                        unpack_hermitian(mean.tail(nf)));
  }
  write_field_series(out_dir / "smoothed_temperature.tsv",
                     "smoothed_temperature", times, t_hat);
  write_field_series(out_dir / "smoothed_theta.tsv", "smoothed_theta", times,
                     theta_hat);

  {
    const auto x = SpectralField::grid(spec.model.n_modes);
    TsvWriter std_t(out_dir / "std_temperature.tsv", "std_temperature",
                    {"time", "x", "std"});
    TsvWriter std_th(out_dir / "std_theta.tsv", "std_theta",
                     {"time", "x", "std"});
    Eigen::MatrixXd dump_mean(n_steps + 1, 2 * nf);
    Eigen::MatrixXd dump_std(n_steps + 1, 2 * nf);
    for (int i = 0; i <= n_steps; ++i) {
      const GaussianBelief& b = result.smoother.beliefs[i];
      dump_mean.row(i) = b.mean.transpose();
      dump_std.row(i) = b.cov.diagonal().cwiseMax(0.0).cwiseSqrt().transpose();
      for (std::size_t j = 0; j < x.size(); ++j) {
        const Eigen::RowVectorXd row =
            evaluation_row(x[j], spec.model.n_modes);
        Eigen::VectorXd full = Eigen::VectorXd::Zero(2 * nf);
        full.head(nf) = row.transpose();
        const double var_t = full.dot(b.cov * full);
        full.setZero();
        full.tail(nf) = row.transpose();
        const double var_th = full.dot(b.cov * full);
        std_t.row({times(i), x[j], std::sqrt(std::max(var_t, 0.0))});
        std_th.row({times(i), x[j], std::sqrt(std::max(var_th, 0.0))});
      }
    }
    write_state_dump(out_dir / "states.bin",
                     {{"smoothed_mean", dump_mean}, {"smoothed_std", dump_std}});
  }

  {
    TsvWriter conv(out_dir / "convergence.tsv", "convergence",
                   {"iteration", "objective", "mean_change",
                    "theta_route_gap", "flux_clips", "unidentifiable_steps"});
    for (const auto& st : summary.report.iterations)
      conv.row({static_cast<double>(st.iteration), st.objective,
                st.mean_change, st.theta_route_gap,
                static_cast<double>(st.flux_clip_count),
                static_cast<double>(st.unidentifiable_steps)});
  }
  if (truth_kappa) {
    TsvWriter err(out_dir / "error_metrics.tsv", "error_metrics",
                  {"iteration", "kappa_rel_l2"});
    for (std::size_t i = 0; i < summary.kappa_errors.size(); ++i)
      err.row({static_cast<double>(i + 1), summary.kappa_errors[i]});
  }

  manifest.set("timings_s", json{{"total", harness_detail::elapsed_s(t0)}});
  manifest.set("stability_number", spec.model.stability_number());
  manifest.set("convergence",
               json{{"converged", summary.report.converged},
                    {"diverged", summary.report.diverged},
                    {"message", summary.report.message},
                    {"iterations", summary.report.iterations.size()}});
  if (summary.final_kappa_error >= 0.0)
    manifest.set("final_kappa_error", summary.final_kappa_error);
  for (const char* name :
       {"mean_temperature.tsv", "mean_kappa.tsv", "smoothed_temperature.tsv",
        "smoothed_theta.tsv", "std_temperature.tsv", "std_theta.tsv",
        "convergence.tsv", "states.bin"})
    manifest.add_file(out_dir, name);
  if (truth_kappa) manifest.add_file(out_dir, "error_metrics.tsv");
  manifest.write(out_dir);
  return summary;
}

// ---------------------------------------------------------------------
// calibrate

struct CalibrationTargets {
  std::vector<double> target_var_temperature;
  std::vector<double> target_var_theta;
  std::vector<double> mu1_candidates;
};

inline CalibrationTargets load_targets(const fs::path& path) {
  const json root = load_json(path);
  io_detail::require_keys(root, "targets",
                          {"format", "target_var_temperature",
                           "target_var_theta", "mu1_candidates"});
  if (root.at("format").get<std::string>() != "diffest-targets/v1")
    throw ConfigError("targets: unsupported format");
  CalibrationTargets t;
  t.target_var_temperature =
      root.at("target_var_temperature").get<std::vector<double>>();
  t.target_var_theta = root.at("target_var_theta").get<std::vector<double>>();
  t.mu1_candidates = root.at("mu1_candidates").get<std::vector<double>>();
  return t;
}

inline void run_calibrate(const RunSpec& spec, const fs::path& targets_path,
                          const fs::path& out_dir,
                          ManifestBuilder& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  const CalibrationTargets targets = load_targets(targets_path);

  NoiseCalibration fit;
  try {
    fit = calibrate_noise(targets.target_var_temperature,
                          targets.target_var_theta, spec.model);
  } catch (const std::invalid_argument& e) {
    throw CalibrationError(e.what());
  }

  ModelConfig calibrated = spec.model;
  calibrated.alpha1 = fit.alpha1;
  calibrated.beta1 = fit.beta1;
  calibrated.alpha2 = fit.alpha2;
  calibrated.beta2 = fit.beta2;

  HyperdiffusionChoice choice;
  try {
    choice = choose_hyperdiffusion(calibrated, spec.source_field(0.0),
                                   targets.mu1_candidates);
  } catch (const std::invalid_argument& e) {
    throw CalibrationError(e.what());
  }
  calibrated.mu1 = choice.mu1_star;

  // Cross-check: stationary covariance of the calibrated model
  // about the initialization means, against the quasistationary balance.
  const SpectralField t_steady = steady_state_temperature(
      calibrated, SpectralField::constant(calibrated.n_modes, calibrated.kappa0),
      spec.source_field(0.0));
  const SpectralField flux = collocation_product(
      SpectralField::constant(calibrated.n_modes, calibrated.kappa0),
      t_steady.derivative());
  const Eigen::MatrixXd gen = drop_zero_mode(
      continuous_generator(calibrated, flux), calibrated.n_modes);
  const Eigen::MatrixXd noise = drop_zero_mode(
      continuous_noise_covariance(calibrated), calibrated.n_modes);
  const StationaryCovariance stat = lyapunov_stationary(gen, noise);

  fs::create_directories(out_dir);
  {
    std::ofstream out(out_dir / "calibration.json");
    const json j = {{"format", "diffest-calibration/v1"},
                    {"alpha1", fit.alpha1},
                    {"beta1", fit.beta1},
                    {"alpha2", fit.alpha2},
                    {"beta2", fit.beta2},
                    {"mu1_star", choice.mu1_star}};
    out << j.dump(2) << "\n";
  }
  {
    TsvWriter curve(out_dir / "mu1_curve.tsv", "mu1_curve",
                    {"mu1", "expected_error"});
    for (const auto& [mu1, err] : choice.error_curve) curve.row({mu1, err});
  }
  {
    TsvWriter table(out_dir / "lyapunov_check.tsv", "lyapunov_check",
                    {"k", "var_T_lyapunov", "var_T_quasistationary",
                     "var_theta_lyapunov", "var_theta_quasistationary"});
    const int N = calibrated.n_modes;
    for (int k = 1; k <= N; ++k) {
      const int it = 2 * (k - 1);
      const int ih = 2 * N + 2 * (k - 1);
      const double var_t = stat.c0(it, it) + stat.c0(it + 1, it + 1);
      const double var_th = stat.c0(ih, ih) + stat.c0(ih + 1, ih + 1);
      table.row({static_cast<double>(k), var_t,
                 stationary_temperature_variance(calibrated, k), var_th,
                 stationary_theta_variance(calibrated, k)});
    }
  }

  manifest.set("timings_s", json{{"total", harness_detail::elapsed_s(t0)}});
  manifest.set("fit", json{{"alpha1", fit.alpha1},
                           {"beta1", fit.beta1},
                           {"alpha2", fit.alpha2},
                           {"beta2", fit.beta2},
                           {"mu1_star", choice.mu1_star}});
  for (const char* name :
       {"calibration.json", "mu1_curve.tsv", "lyapunov_check.tsv"})
    manifest.add_file(out_dir, name);
  manifest.write(out_dir);
}

// ---------------------------------------------------------------------
// sweep

struct SweepSpec {
  std::string parameter;  // "sigma" or "sensor_count"
  std::vector<double> values;
};

inline SweepSpec load_sweep_spec(const fs::path& path) {
  const json root = load_json(path);
  io_detail::require_keys(root, "sweep", {"format", "parameter", "values"});
  if (root.at("format").get<std::string>() != "diffest-sweep/v1")
    throw ConfigError("sweep: unsupported format");
  SweepSpec s;
  s.parameter = root.at("parameter").get<std::string>();
  if (s.parameter != "sigma" && s.parameter != "sensor_count")
    throw ConfigError("sweep: parameter must be 'sigma' or 'sensor_count'");
  s.values = root.at("values").get<std::vector<double>>();
  if (s.values.empty()) throw ConfigError("sweep: empty value list");
  return s;
}

/// Applies one sweep value to the base spec. Sensor-count sweeps take
/// nested subsets of the base sensor array (stride base/m), so information
/// content is ordered by m.
inline RunSpec sweep_variant(const RunSpec& base, const std::string& parameter,
                             double value) {
  RunSpec spec = base;
  if (parameter == "sigma") {
    if (!(value > 0.0)) throw ConfigError("sweep: sigma must be positive");
    for (auto& s : spec.model.sensor_sigmas) s = value;
  } else {
    const int m = static_cast<int>(value);
    const int base_m = base.model.n_sensors();
    if (m < 1 || m > base_m || base_m % m != 0)
      throw ConfigError(
          "sweep: sensor_count must divide the base sensor count");
    const int stride = base_m / m;
    spec.model.sensor_locations.clear();
    spec.model.sensor_sigmas.clear();
    for (int l = 0; l < m; ++l) {
      spec.model.sensor_locations.push_back(
          base.model.sensor_locations[l * stride]);
      spec.model.sensor_sigmas.push_back(
          base.model.sensor_sigmas[l * stride]);
    }
  }
  return spec;
}

inline void run_sweep(const RunSpec& base, const fs::path& sweep_path,
                      const fs::path& out_dir, ManifestBuilder& manifest) {
  const auto t0 = std::chrono::steady_clock::now();
  const SweepSpec sweep = load_sweep_spec(sweep_path);
  if (base.truth_kappa_modes.empty())
    throw ConfigError("sweep: config must include a 'truth' section");

  fs::create_directories(out_dir);
  struct Row {
    double value;
    double error;
    std::string dir;
  };
  std::vector<Row> rows;
  for (double value : sweep.values) {
    const RunSpec spec = sweep_variant(base, sweep.parameter, value);
    char label[32];
    std::snprintf(label, sizeof(label), "value_%g", value);
    const std::string name(label);
    const fs::path sub = out_dir / name;
    fs::create_directories(sub);

    ManifestBuilder sim_manifest("simulate", json{{"sweep_value", value}});
    run_simulate(spec, sub, sim_manifest);
    ManifestBuilder est_manifest("estimate", json{{"sweep_value", value}});
    const EstimateSummary summary =
        run_estimate(spec, sub / "measurements.tsv", sub, est_manifest);
    rows.push_back({value, summary.final_kappa_error, name});
  }

  // Monotonicity flag along the more-information direction.
  std::vector<Row> ordered = rows;
  std::sort(ordered.begin(), ordered.end(), [&](const Row& a, const Row& b) {
    return sweep.parameter == "sigma" ? a.value > b.value : a.value < b.value;
  });
  bool violated = false;
  for (std::size_t i = 1; i < ordered.size(); ++i)
    if (ordered[i].error > ordered[i - 1].error + 1e-15) violated = true;

  {
    TsvWriter table(out_dir / "sweep_summary.tsv", "sweep_summary",
                    {"value", "final_kappa_error", "monotone_violated"},
                    {"parameter=" + sweep.parameter});
    for (const auto& r : rows)
      table.row({r.value, r.error, violated ? 1.0 : 0.0});
  }
  if (violated)
    std::cerr << "warning: sweep error column is not monotone in the "
                 "information ordering\n";

  manifest.set("parameter", sweep.parameter);
  manifest.set("monotone_violated", violated);
  manifest.set("timings_s", json{{"total", harness_detail::elapsed_s(t0)}});
  manifest.add_file(out_dir, "sweep_summary.tsv");
  manifest.write(out_dir);
}

// ---------------------------------------------------------------------
// Exit-code wrappers

namespace harness_detail {

template <typename Fn>
int guarded(const char* command, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << command << ": config error: " << e.what() << "\n";
    return ConfigError::exit_code;
  } catch (const DataError& e) {
    std::cerr << command << ": data error: " << e.what() << "\n";
    return DataError::exit_code;
  } catch (const CalibrationError& e) {
    std::cerr << command << ": calibration error: " << e.what() << "\n";
    return CalibrationError::exit_code;
  } catch (const DivergenceError& e) {
    std::cerr << command << ": numerical divergence: " << e.what() << "\n";
    return DivergenceError::exit_code;
  } catch (const std::invalid_argument& e) {
    std::cerr << command << ": config error: " << e.what() << "\n";
    return ConfigError::exit_code;
  } catch (const std::exception& e) {
    std::cerr << command << ": numerical failure: " << e.what() << "\n";
    return DivergenceError::exit_code;
  }
}

}  // namespace harness_detail

inline int cmd_simulate(const fs::path& config_path, const fs::path& out_dir,
                        const CliOverrides& overrides = {}) {
  return harness_detail::guarded("simulate", [&] {
    const json config_json = load_json(config_path);
    RunSpec spec = parse_run_spec(config_json);
    overrides.apply(spec);
    if (spec.truth_kappa_modes.empty())
      throw ConfigError("simulate: config must include a 'truth' section");
    ManifestBuilder manifest("simulate", config_json);
    run_simulate(spec, out_dir, manifest);
  });
}

inline int cmd_estimate(const fs::path& config_path,
                        const fs::path& measurements_path,
                        const fs::path& out_dir,
                        const CliOverrides& overrides = {}) {
  int divergence_flag = 0;
  const int code = harness_detail::guarded("estimate", [&] {
    const json config_json = load_json(config_path);
    RunSpec spec = parse_run_spec(config_json);
    overrides.apply(spec);
    ManifestBuilder manifest("estimate", config_json);
    const EstimateSummary summary =
        run_estimate(spec, measurements_path, out_dir, manifest);
    if (summary.report.diverged) divergence_flag = DivergenceError::exit_code;
  });
  return code != 0 ? code : divergence_flag;
}

inline int cmd_calibrate(const fs::path& config_path,
                         const fs::path& targets_path,
                         const fs::path& out_dir,
                         const CliOverrides& overrides = {}) {
  return harness_detail::guarded("calibrate", [&] {
    const json config_json = load_json(config_path);
    RunSpec spec = parse_run_spec(config_json);
    overrides.apply(spec);
    ManifestBuilder manifest("calibrate", config_json);
    run_calibrate(spec, targets_path, out_dir, manifest);
  });
}

inline int cmd_sweep(const fs::path& config_path, const fs::path& sweep_path,
                     const fs::path& out_dir,
                     const CliOverrides& overrides = {}) {
  return harness_detail::guarded("sweep", [&] {
    const json config_json = load_json(config_path);
    RunSpec spec = parse_run_spec(config_json);
    overrides.apply(spec);
    ManifestBuilder manifest("sweep", config_json);
    run_sweep(spec, sweep_path, out_dir, manifest);
  });
}

}  // namespace diffest
