#pragma once

// Synthetic-truth generation for twin experiments: joint advance of the
// temperature and the log-diffusivity fluctuation under the semi-implicit
// Milstein scheme, with prescribed true diffusivity kappa(x, t) and source,
// plus noisy sensor sampling of the resulting temperature field.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffest/kalman.hpp"
#include "diffest/operators.hpp"
#include "diffest/spectral.hpp"

namespace diffest {

using SpaceTimeFn = std::function<double(double x, double t)>;

/// Draws a Hermitian complex noise vector with per-mode variances
/// alpha |k|^{-beta} dt (full variance on k = 0, split evenly between the
/// real and imaginary parts for k >= 1). Mode order k = 0..N, real part
/// before imaginary part, so trajectories are reproducible per seed.
inline Eigen::VectorXcd draw_hermitian_noise(std::mt19937_64& rng,
                                             double alpha, double beta,
                                             double dt, int n_modes) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXcd w = Eigen::VectorXcd::Zero(2 * n_modes + 1);
  w(n_modes) = std::sqrt(noise_power(alpha, beta, 0) * dt) * gauss(rng);
  for (int k = 1; k <= n_modes; ++k) {
    const double sd = std::sqrt(0.5 * noise_power(alpha, beta, k) * dt);
    const Complex value(sd * gauss(rng), sd * gauss(rng));
    w(n_modes + k) = value;
    w(n_modes - k) = std::conj(value);
  }
  return w;
}

struct TruthTrajectory {
  Eigen::VectorXd times;                  // n_steps + 1 instants
  std::vector<SpectralField> temperature; // full T(x, t_i)
  std::vector<SpectralField> theta;       // full ln kappa(x, t_i)
  std::uint64_t seed = 0;
};

struct MeasurementSet {
  Eigen::VectorXd times;
  std::vector<int> step_indices;       // measurement instants, in steps
  Eigen::MatrixXd values;              // m x n_meas
  std::vector<double> sensor_locations;
  std::vector<double> sensor_sigmas;
  std::uint64_t seed = 0;

  int n_instants() const { return static_cast<int>(step_indices.size()); }
};

/// Steady temperature of div(kappa dT/dx) - mu1 d4T/dx4 + S = 0 with the
/// pseudospectral product operator; the source must have zero mean. The
/// k = 0 mode is set to S_rms / kappa_bar0 by the Sec. IV convention.
inline SpectralField steady_state_temperature(const ModelConfig& config,
                                              const SpectralField& kappa,
                                              const SpectralField& source) {
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  if (std::abs(source.coeff(0)) > 1e-12 * (1.0 + source.coeffs().norm()))
    throw std::invalid_argument(
        "steady_state_temperature: source must have zero mean");
  Eigen::MatrixXd op(nf, nf);
  for (int j = 0; j < nf; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(nf);
    e(j) = 1.0;
    const SpectralField basis = unpack_hermitian(e);
    SpectralField image =
        collocation_product(kappa, basis.derivative()).derivative();
    for (int k = -N; k <= N; ++k) {
      const double k2 = static_cast<double>(k) * k;
      image.set_coeff(k, image.coeff(k) - config.mu1 * k2 * k2 * basis.coeff(k));
    }
    op.col(j) = pack_hermitian(image);
  }
  const Eigen::VectorXd s = pack_hermitian(source);
  Eigen::VectorXd t = Eigen::VectorXd::Zero(nf);
  // The constant mode spans the null space; solve on the remaining 2N dofs.
  t.tail(2 * N) =
      op.bottomRightCorner(2 * N, 2 * N).partialPivLu().solve(-s.tail(2 * N));
  t(0) = field_rms(source) / kappa.coeff(0).real();
  return unpack_hermitian(t);
}

struct SimulationOptions {
  int refine = 1;  // run at dt/refine and keep every refine-th state
  std::optional<SpectralField> initial_temperature;
  std::optional<SpectralField> initial_theta_fluctuation;
};

/// Advances (T, theta) jointly: theta_tilde follows the Cayley OU step with
/// its exact noise gain; the temperature step uses the full diffusivity
/// kappa(x, t) exp(theta_tilde) frozen at mid-step, so no linearization
/// enters the truth. Aborts when any |T_k| exceeds 1e12.
inline TruthTrajectory simulate_truth(const ModelConfig& config,
                                      const SpaceTimeFn& true_kappa,
                                      const SpaceTimeFn& source,
                                      std::uint64_t seed,
                                      const SimulationOptions& options = {}) {
  config.validate();
  if (options.refine < 1)
    throw std::invalid_argument("simulate_truth: refine must be >= 1");
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  const std::vector<double> x = SpectralField::grid(N);
  const double dt_fine = config.dt / options.refine;

  ModelConfig fine = config;
  fine.dt = dt_fine;

  auto sample_field = [&](const SpaceTimeFn& fn, double t) {
    Eigen::VectorXd v(nf);
    for (int j = 0; j < nf; ++j) v(j) = fn(x[j], t);
    return SpectralField::to_spectral(v);
  };

  SpectralField kappa_init = sample_field(true_kappa, 0.0);
  SpectralField temperature =
      options.initial_temperature.has_value()
          ? *options.initial_temperature
          : steady_state_temperature(config, kappa_init,
                                     sample_field(source, 0.0));
  SpectralField theta_fluct = options.initial_theta_fluctuation.has_value()
                                  ? *options.initial_theta_fluctuation
                                  : SpectralField(N);
  if (temperature.n_modes() != N || theta_fluct.n_modes() != N)
    throw std::invalid_argument("simulate_truth: initial field size mismatch");

  std::mt19937_64 rng(seed);
  TruthTrajectory out;
  out.seed = seed;
  out.times.resize(config.n_steps + 1);
  out.temperature.reserve(config.n_steps + 1);
  out.theta.reserve(config.n_steps + 1);

  auto record = [&](int step, double t) {
    out.times(step) = t;
    out.temperature.push_back(temperature);
    out.theta.push_back(log_diffusivity(sample_field(true_kappa, t)) +
                        theta_fluct);
  };
  record(0, 0.0);

  const SpectralField zero_flux(N);
  const TransitionOperators theta_ops = build_transition(
      fine, SpectralField::constant(N, config.kappa0), zero_flux);
  for (int step = 0; step < config.n_steps; ++step) {
    for (int sub = 0; sub < options.refine; ++sub) {
      const double t = (step + static_cast<double>(sub) / options.refine) *
                       config.dt;
      const Eigen::VectorXcd w2 =
          draw_hermitian_noise(rng, config.alpha2, config.beta2, dt_fine, N);
      const Eigen::VectorXcd w =
          draw_hermitian_noise(rng, config.alpha1, config.beta1, dt_fine, N);

      // theta advance first; the temperature sees kappa at mid-step.
      const Eigen::VectorXcd theta_next =
          complex_theta_step(theta_ops, theta_fluct.coeffs(), w2);
      const SpectralField theta_mid = SpectralField::from_coeffs(
          0.5 * (theta_fluct.coeffs() + theta_next));

      const double t_mid = t + 0.5 * dt_fine;
      Eigen::VectorXd kappa_grid = exp_diffusivity(theta_mid).to_physical();
      for (int j = 0; j < nf; ++j) kappa_grid(j) *= true_kappa(x[j], t_mid);
      const SpectralField kappa_step = SpectralField::to_spectral(kappa_grid);

      TransitionOperators ops = build_transition(fine, kappa_step, zero_flux);
      Eigen::VectorXcd t_next = complex_temperature_step(
          ops, temperature.coeffs(), theta_fluct.coeffs(), w2);
      const SpectralField src = sample_field(source, t_mid);
      t_next += dt_fine * src.coeffs() + w;

      temperature = SpectralField::from_coeffs(t_next);
      theta_fluct = SpectralField::from_coeffs(theta_next);

      if (temperature.coeffs().cwiseAbs().maxCoeff() > 1e12)
        throw std::runtime_error(
            "simulate_truth: instability detected at step " +
            std::to_string(step + 1));
    }
    record(step + 1, (step + 1) * config.dt);
  }
  return out;
}

/// y_{l,i} = T(x_l, t_i) + eps with independent Gaussian eps of variance
/// sigma_l^2, taken every measure_every steps starting at the first step.
inline MeasurementSet synthesize_measurements(const TruthTrajectory& truth,
                                              const ModelConfig& config,
                                              int measure_every,
                                              std::uint64_t seed) {
  if (measure_every < 1)
    throw std::invalid_argument(
        "synthesize_measurements: measure_every must be >= 1");
  const int m = config.n_sensors();
  const int n_steps = static_cast<int>(truth.temperature.size()) - 1;
  MeasurementSet out;
  out.seed = seed;
  out.sensor_locations = config.sensor_locations;
  out.sensor_sigmas = config.sensor_sigmas;
  for (int j = measure_every; j <= n_steps; j += measure_every)
    out.step_indices.push_back(j);
  const int n_meas = out.n_instants();
  out.times.resize(n_meas);
  out.values.resize(m, n_meas);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < n_meas; ++i) {
    const int j = out.step_indices[i];
    out.times(i) = truth.times(j);
    for (int l = 0; l < m; ++l) {
      out.values(l, i) =
          truth.temperature[j].value_at(config.sensor_locations[l]) +
          config.sensor_sigmas[l] * gauss(rng);
    }
  }
  return out;
}

/// Measurement sequence aligned with stages (stage i carries the optional
/// measurement at time index i+1).
inline MeasurementSequence to_measurement_sequence(const MeasurementSet& set,
                                                   int n_steps) {
  MeasurementSequence seq(n_steps);
  for (int i = 0; i < set.n_instants(); ++i) {
    const int j = set.step_indices[i];
    if (j < 1 || j > n_steps)
      throw std::invalid_argument(
          "to_measurement_sequence: measurement instant out of range");
    seq[j - 1] = set.values.col(i);
  }
  return seq;
}

}  // namespace diffest
