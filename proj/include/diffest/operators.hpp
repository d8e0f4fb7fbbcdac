#pragma once

// Assembly of the discrete evolution, noise, and measurement operators for
// the stochastically forced periodic heat equation with log-diffusivity
// fluctuations. The time advance is the semi-implicit (Cayley) scheme
//
//   theta_k(t+dt) = decay_k theta_k(t) + w2_k / (1 + dt/2 mu2 k^2)
//   T_k(t+dt)     = f_k T_k(t) - sum_{k' != k} g_{kk'} T_{k'}(t)
//                   + sum_{k'} h_{kk'} theta_{k'}(t) + sum_{k'} c_{kk'} w2_{k'}
//                   + S_k dt + w_k
//
// with d_k = 1 + dt/2 (kappa0 k^2 + mu1 k^4) and f_k = (2 - d_k)/d_k.
// The theta coupling coefficients carry the factor ik of d/dx, so that the
// maps preserve Hermitian symmetry and induce real matrices on the packed
// state.

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffest/spectral.hpp"
#include "diffest/state_space.hpp"

namespace diffest {

struct ModelConfig {
  int n_modes = 0;       // N_T
  double kappa0 = 1.0;   // mean diffusivity
  double mu1 = 0.0;      // hyperdiffusivity
  double mu2 = 1.0;      // theta diffusivity
  double alpha1 = 1.0;   // T-noise spectrum amplitude
  double beta1 = 0.0;    // T-noise spectral exponent
  double alpha2 = 1.0;   // theta-noise amplitude
  double beta2 = 0.0;    // theta-noise exponent
  double dt = 0.01;
  int n_steps = 1;       // N_f
  std::vector<double> sensor_locations;
  std::vector<double> sensor_sigmas;

  int n_sensors() const { return static_cast<int>(sensor_locations.size()); }
  int state_dim() const { return 2 * (2 * n_modes + 1); }
  int field_dim() const { return 2 * n_modes + 1; }

  /// dt (kappa0 N^2 + mu1 N^4); reported as a diagnostic, not enforced.
  double stability_number() const {
    const double n2 = static_cast<double>(n_modes) * n_modes;
    return dt * (kappa0 * n2 + mu1 * n2 * n2);
  }

  void validate() const {
    auto fail = [](const std::string& what) {
      throw std::invalid_argument("ModelConfig: " + what);
    };
    if (n_modes < 1) fail("n_modes must be >= 1");
    if (!(kappa0 > 0.0)) fail("kappa0 must be positive");
    if (!(mu1 >= 0.0)) fail("mu1 must be nonnegative");
    if (!(mu2 > 0.0)) fail("mu2 must be positive");
    if (!(alpha1 >= 0.0)) fail("alpha1 must be nonnegative");
    if (!(alpha2 >= 0.0)) fail("alpha2 must be nonnegative");
    if (!(beta1 >= 0.0)) fail("beta1 must be nonnegative");
    if (!(beta2 >= 0.0)) fail("beta2 must be nonnegative");
    if (!(dt > 0.0)) fail("dt must be positive");
    if (n_steps < 0) fail("n_steps must be nonnegative");
    if (sensor_locations.size() != sensor_sigmas.size())
      fail("sensor_locations and sensor_sigmas must have equal length");
    for (std::size_t i = 0; i < sensor_locations.size(); ++i) {
      if (!(sensor_sigmas[i] >= 0.0)) fail("sensor_sigmas must be >= 0");
      if (i > 0 && !(sensor_locations[i] > sensor_locations[i - 1]))
        fail("sensor_locations must be strictly increasing");
    }
  }
};

/// Uniformly distributed sensors x_l = pi (2l - m - 1)/m, l = 1..m.
inline std::vector<double> uniform_sensor_locations(int m) {
  std::vector<double> x(m);
  for (int l = 1; l <= m; ++l)
    x[l - 1] = std::numbers::pi * (2.0 * l - m - 1.0) / m;
  return x;
}

/// Per-mode noise variance alpha |k|^{-beta} with the k = 0 factor set to 1.
inline double noise_power(double alpha, double beta, int k) {
  if (k == 0) return alpha;
  return alpha * std::pow(static_cast<double>(std::abs(k)), -beta);
}

struct TransitionOperators {
  int n_modes = 0;
  double dt = 0.0;
  double mu2 = 0.0;
  Eigen::VectorXd d;            // d_k, indexed k + N
  Eigen::VectorXd f;            // f_k
  Eigen::VectorXd theta_decay;  // Cayley factor of the theta advance
  Eigen::VectorXd theta_noise_gain;  // 1 / (1 + dt/2 mu2 k^2)
  Eigen::MatrixXcd g;  // temperature-temperature coupling, zero diagonal
  Eigen::MatrixXcd h;  // theta -> temperature coupling
  Eigen::MatrixXcd c;  // w2 -> temperature coupling

  int idx(int k) const { return k + n_modes; }
};

/// Builds the per-step operators about the given mean diffusivity and mean
/// heat flux (mean_flux = kappa_bar * d/dx T_bar, computed by the caller).
/// The diagonal dissipation uses the k = 0 coefficient of mean_kappa.
inline TransitionOperators build_transition(const ModelConfig& config,
                                            const SpectralField& mean_kappa,
                                            const SpectralField& mean_flux) {
  const int N = config.n_modes;
  const int n = 2 * N + 1;
  if (mean_kappa.n_modes() != N || mean_flux.n_modes() != N)
    throw std::invalid_argument("build_transition: field size mismatch");
  {
    const Eigen::VectorXd kv = mean_kappa.to_physical();
    for (int j = 0; j < kv.size(); ++j)
      if (!(kv(j) > 0.0))
        throw std::domain_error(
            "build_transition: mean diffusivity not positive at grid index " +
            std::to_string(j));
  }

  const double kbar0 = mean_kappa.coeff(0).real();
  const double dt = config.dt;

  TransitionOperators ops;
  ops.n_modes = N;
  ops.dt = dt;
  ops.mu2 = config.mu2;
  ops.d.resize(n);
  ops.f.resize(n);
  ops.theta_decay.resize(n);
  ops.theta_noise_gain.resize(n);
  ops.g = Eigen::MatrixXcd::Zero(n, n);
  ops.h = Eigen::MatrixXcd::Zero(n, n);
  ops.c = Eigen::MatrixXcd::Zero(n, n);

  for (int k = -N; k <= N; ++k) {
    const double k2 = static_cast<double>(k) * k;
    const double a = kbar0 * k2 + config.mu1 * k2 * k2;
    const double dk = 1.0 + 0.5 * dt * a;
    ops.d(ops.idx(k)) = dk;
    ops.f(ops.idx(k)) = (1.0 - 0.5 * dt * a) / dk;
    const double m = 0.5 * dt * config.mu2 * k2;
    ops.theta_decay(ops.idx(k)) = (1.0 - m) / (1.0 + m);
    ops.theta_noise_gain(ops.idx(k)) = 1.0 / (1.0 + m);
  }

  for (int k = -N; k <= N; ++k) {
    const double dk = ops.d(ops.idx(k));
    for (int kp = -N; kp <= N; ++kp) {
      const int dk_idx = k - kp;
      if (std::abs(dk_idx) > N) continue;  // band-limited mean fields
      const double dkp = ops.d(ops.idx(kp));
      if (kp != k) {
        ops.g(ops.idx(k), ops.idx(kp)) =
            0.5 * dt * k * kp * mean_kappa.coeff(dk_idx) *
            (1.0 + 1.0 / (dk * dkp));
      }
      const Complex ik(0.0, static_cast<double>(k));
      const Complex gamma = mean_flux.coeff(dk_idx);
      ops.h(ops.idx(k), ops.idx(kp)) =
          ik * gamma * dt / (2.0 * dk) *
          (1.0 + ops.theta_decay(ops.idx(kp)));
      ops.c(ops.idx(k), ops.idx(kp)) =
          ik * gamma * dt / (2.0 * dk) * ops.theta_noise_gain(ops.idx(kp));
    }
  }
  return ops;
}

/// Deterministic part of the temperature advance plus the w2 cross-term;
/// the caller adds S_k dt and the temperature noise w.
inline Eigen::VectorXcd complex_temperature_step(
    const TransitionOperators& ops, const Eigen::VectorXcd& temperature,
    const Eigen::VectorXcd& theta, const Eigen::VectorXcd& w2) {
  return ops.f.cast<Complex>().cwiseProduct(temperature) -
         ops.g * temperature + ops.h * theta + ops.c * w2;
}

inline Eigen::VectorXcd complex_theta_step(const TransitionOperators& ops,
                                           const Eigen::VectorXcd& theta,
                                           const Eigen::VectorXcd& w2) {
  return ops.theta_decay.cast<Complex>().cwiseProduct(theta) +
         ops.theta_noise_gain.cast<Complex>().cwiseProduct(w2);
}

/// Sensor-evaluation measurement operator: row l of H evaluates the packed
/// temperature block at x_l; R = diag(sigma_l^2).
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> build_measurement(
    const ModelConfig& config) {
  const int m = config.n_sensors();
  const int nf = config.field_dim();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, 2 * nf);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
  for (int l = 0; l < m; ++l) {
    H.block(l, 0, 1, nf) =
        evaluation_row(config.sensor_locations[l], config.n_modes);
    R(l, l) = config.sensor_sigmas[l] * config.sensor_sigmas[l];
  }
  return {H, R};
}

/// Mode-space measurement matrices (validation route):
///   H_mode(k,k') = sum_l exp(i (k - k') x_l),   0 <= k <= m/2, |k'| <= N
///   R_mode(k,k') = sum_l sigma_l^2 exp(i (k' - k) x_l), 0 <= k,k' <= m/2.
inline std::pair<Eigen::MatrixXcd, Eigen::MatrixXcd> mode_space_measurement(
    const ModelConfig& config) {
  const int m = config.n_sensors();
  const int N = config.n_modes;
  const int rows = m / 2 + 1;
  Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(rows, 2 * N + 1);
  Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(rows, rows);
  for (int k = 0; k < rows; ++k) {
    for (int kp = -N; kp <= N; ++kp) {
      Complex sum(0.0, 0.0);
      for (int l = 0; l < m; ++l)
        sum += std::polar(1.0, (k - kp) * config.sensor_locations[l]);
      H(k, kp + N) = sum;
    }
    for (int kp = 0; kp < rows; ++kp) {
      Complex sum(0.0, 0.0);
      for (int l = 0; l < m; ++l) {
        const double s2 = config.sensor_sigmas[l] * config.sensor_sigmas[l];
        sum += s2 * std::polar(1.0, (kp - k) * config.sensor_locations[l]);
      }
      R(k, kp) = sum;
    }
  }
  return {H, R};
}

/// Diagonal process-noise covariance on the packed state: per complex mode k
/// the variance alpha |k|^{-beta} dt splits evenly between the real and
/// imaginary components; the k = 0 component carries the full variance.
inline Eigen::VectorXd packed_noise_variances(double alpha, double beta,
                                              double dt, int n_modes) {
  Eigen::VectorXd q(2 * n_modes + 1);
  q(0) = noise_power(alpha, beta, 0) * dt;
  for (int k = 1; k <= n_modes; ++k) {
    const double v = 0.5 * noise_power(alpha, beta, k) * dt;
    q(2 * k - 1) = v;
    q(2 * k) = v;
  }
  return q;
}

/// Assembles the full real stage model for one time step. The state is
/// [packed T; packed theta]; the noise vector is [packed w; packed w2];
/// B carries the identity into both blocks plus the c-coupling of w2 into
/// the temperature block; s is the source contribution S_k dt.
inline LinearStageModel assemble_stage(const TransitionOperators& ops,
                                       const ModelConfig& config,
                                       const SpectralField& source) {
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  if (ops.n_modes != N)
    throw std::invalid_argument("assemble_stage: operator size mismatch");

  LinearStageModel stage;
  stage.F = Eigen::MatrixXd::Zero(2 * nf, 2 * nf);
  Eigen::MatrixXcd a_tt =
      Eigen::MatrixXcd(ops.f.cast<Complex>().asDiagonal()) - ops.g;
  stage.F.topLeftCorner(nf, nf) = realify_hermitian_map(a_tt, N);
  stage.F.topRightCorner(nf, nf) = realify_hermitian_map(ops.h, N);
  stage.F.bottomRightCorner(nf, nf) = realify_hermitian_map(
      Eigen::MatrixXcd(ops.theta_decay.cast<Complex>().asDiagonal()), N);

  stage.B = Eigen::MatrixXd::Identity(2 * nf, 2 * nf);
  stage.B.topRightCorner(nf, nf) = realify_hermitian_map(ops.c, N);

  Eigen::VectorXd q(2 * nf);
  q.head(nf) = packed_noise_variances(config.alpha1, config.beta1, config.dt, N);
  q.tail(nf) = packed_noise_variances(config.alpha2, config.beta2, config.dt, N);
  stage.Q = q.asDiagonal();

  auto [H, R] = build_measurement(config);
  stage.H = std::move(H);
  stage.R = std::move(R);

  stage.s = Eigen::VectorXd::Zero(2 * nf);
  stage.s.head(nf) = config.dt * pack_hermitian(source);
  return stage;
}

}  // namespace diffest
