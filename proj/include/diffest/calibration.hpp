#pragma once

// Mapping from prior beliefs about fluctuation size (stationary variances C)
// to the stochastic model parameters: inversion of the quasistationary
// balance C ~ Q / (2 a_k) into power-law noise spectra, the bias-variance
// selection of the hyperdiffusivity, and the dimensional initial-condition
// prescriptions.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "diffest/operators.hpp"
#include "diffest/spectral.hpp"

namespace diffest {

/// Quasistationary variance of one complex mode, theta branch:
/// C_theta,k = Q_theta,k / (2 mu2 k^2), with Q the continuous intensity.
inline double stationary_theta_variance(const ModelConfig& config, int k) {
  const int kk = std::max(1, std::abs(k));
  return noise_power(config.alpha2, config.beta2, kk) /
         (2.0 * config.mu2 * kk * kk);
}

/// Temperature branch: C_T,k = Q_T,k / (2 (kappa0 k^2 + mu1 k^4)).
inline double stationary_temperature_variance(const ModelConfig& config,
                                              int k) {
  const int kk = std::max(1, std::abs(k));
  const double k2 = static_cast<double>(kk) * kk;
  return noise_power(config.alpha1, config.beta1, kk) /
         (2.0 * (config.kappa0 * k2 + config.mu1 * k2 * k2));
}

struct NoiseCalibration {
  double alpha1 = 0.0, beta1 = 0.0;
  double alpha2 = 0.0, beta2 = 0.0;
};

namespace detail {

inline std::pair<double, double> fit_power_law(
    const std::vector<double>& q_by_mode) {
  const int n = static_cast<int>(q_by_mode.size());
  // log Q_k = log alpha - beta log k, least squares over k = 1..n.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 1; k <= n; ++k) {
    const double x = std::log(static_cast<double>(k));
    const double y = std::log(q_by_mode[k - 1]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  const double slope = (n * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / n;
  return {std::exp(intercept), -slope};
}

}  // namespace detail

/// Inverts the quasistationary balance: Q_theta,k = 2 mu2 k^2 C_theta,k and
/// Q_T,k = 2 (kappa0 k^2 + mu1 k^4) C_T,k, then fits (alpha, beta) by least
/// squares of log Q against log k. Targets are per-mode stationary
/// variances for k = 1..K, K >= 2.
inline NoiseCalibration calibrate_noise(
    const std::vector<double>& target_var_temperature,
    const std::vector<double>& target_var_theta, const ModelConfig& config) {
  if (target_var_temperature.size() < 2 || target_var_theta.size() < 2)
    throw std::invalid_argument(
        "calibrate_noise: underdetermined — need targets for at least two "
        "distinct |k| values");
  for (double v : target_var_temperature)
    if (!(v > 0.0))
      throw std::invalid_argument("calibrate_noise: targets must be positive");
  for (double v : target_var_theta)
    if (!(v > 0.0))
      throw std::invalid_argument("calibrate_noise: targets must be positive");

  std::vector<double> q_t(target_var_temperature.size());
  for (std::size_t i = 0; i < q_t.size(); ++i) {
    const double k2 = static_cast<double>(i + 1) * (i + 1);
    q_t[i] = 2.0 * (config.kappa0 * k2 + config.mu1 * k2 * k2) *
             target_var_temperature[i];
  }
  std::vector<double> q_th(target_var_theta.size());
  for (std::size_t i = 0; i < q_th.size(); ++i) {
    const double k2 = static_cast<double>(i + 1) * (i + 1);
    q_th[i] = 2.0 * config.mu2 * k2 * target_var_theta[i];
  }

  NoiseCalibration out;
  std::tie(out.alpha1, out.beta1) = detail::fit_power_law(q_t);
  std::tie(out.alpha2, out.beta2) = detail::fit_power_law(q_th);
  return out;
}

struct HyperdiffusionChoice {
  double mu1_star = 0.0;
  std::vector<std::pair<double, double>> error_curve;  // (mu1, expected error)
};

/// Expected-error curve sum_k (Q_T,k + |(mu1/kappa0) k^2 S_k|^2) /
/// (kappa0 k^2 + mu1 k^4)^2 over k >= 1, minimized over the candidates.
inline HyperdiffusionChoice choose_hyperdiffusion(
    const ModelConfig& config, const SpectralField& source,
    const std::vector<double>& candidate_mu1) {
  if (candidate_mu1.empty())
    throw std::invalid_argument("choose_hyperdiffusion: no candidates");
  for (std::size_t i = 0; i < candidate_mu1.size(); ++i) {
    if (!(candidate_mu1[i] >= 0.0))
      throw std::invalid_argument(
          "choose_hyperdiffusion: candidates must be nonnegative");
    if (i > 0 && candidate_mu1[i] < candidate_mu1[i - 1])
      throw std::invalid_argument(
          "choose_hyperdiffusion: candidates must be sorted");
  }
  HyperdiffusionChoice out;
  double best = std::numeric_limits<double>::infinity();
  for (double mu1 : candidate_mu1) {
    double err = 0.0;
    for (int k = 1; k <= config.n_modes; ++k) {
      const double k2 = static_cast<double>(k) * k;
      const double q = noise_power(config.alpha1, config.beta1, k);
      const double bias =
          mu1 / config.kappa0 * k2 * std::abs(source.coeff(k));
      const double denom = config.kappa0 * k2 + mu1 * k2 * k2;
      err += (q + bias * bias) / (denom * denom);
    }
    out.error_curve.emplace_back(mu1, err);
    if (err < best) {
      best = err;
      out.mu1_star = mu1;
    }
  }
  return out;
}

struct InitialCondition {
  Eigen::VectorXd mean;       // prior state mean [packed T; packed theta]
  Eigen::MatrixXd cov;        // diagonal prior covariance
  SpectralField kappa_field;  // kappa(x, 0) = kappa0
};

/// Dimensional initial prescriptions: T_k(0) = S_k / kappa0 k^2,
/// T_0(0) = S_rms / kappa0, prior variances (S0_k / kappa0 k^2)^2 with
/// S0_k = max(|S_k(0)|, S_rms); the theta block starts at zero with its
/// quasistationary prior variance.
inline InitialCondition default_initialization(const ModelConfig& config,
                                               const SpectralField& source) {
  config.validate();
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  const double s_rms = field_rms(source);

  SpectralField t0(N);
  t0.set_mode_pair(0, s_rms / config.kappa0);
  for (int k = 1; k <= N; ++k)
    t0.set_mode_pair(k, source.coeff(k) / (config.kappa0 * k * k));

  Eigen::VectorXd var = Eigen::VectorXd::Zero(2 * nf);
  {
    const double s0 = std::max(std::abs(source.coeff(0)), s_rms);
    const double sd = s0 / config.kappa0;
    var(0) = sd * sd;
    for (int k = 1; k <= N; ++k) {
      const double sk = std::max(std::abs(source.coeff(k)), s_rms);
      const double sdk = sk / (config.kappa0 * k * k);
      var(2 * k - 1) = 0.5 * sdk * sdk;
      var(2 * k) = 0.5 * sdk * sdk;
    }
  }
  var(nf) = stationary_theta_variance(config, 1);
  for (int k = 1; k <= N; ++k) {
    const double v = 0.5 * stationary_theta_variance(config, k);
    var(nf + 2 * k - 1) = v;
    var(nf + 2 * k) = v;
  }
  // Keep the prior invertible even for degenerate (zero) sources.
  for (int i = 0; i < var.size(); ++i) var(i) = std::max(var(i), 1e-12);

  InitialCondition out{Eigen::VectorXd::Zero(2 * nf), var.asDiagonal(),
                       SpectralField::constant(N, config.kappa0)};
  out.mean.head(nf) = pack_hermitian(t0);
  return out;
}

/// Continuous-time generator of the frozen-coefficient fluctuation system
/// (diagonal dissipation plus the mean-flux coupling), used for the
/// stationary-covariance analysis. Independent of dt.
inline Eigen::MatrixXd continuous_generator(const ModelConfig& config,
                                            const SpectralField& mean_flux) {
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(2 * nf, 2 * nf);
  auto set_diag_pair = [&](int block, int k, double value) {
    const int base = block * nf;
    if (k == 0) {
      f(base, base) = value;
    } else {
      f(base + 2 * k - 1, base + 2 * k - 1) = value;
      f(base + 2 * k, base + 2 * k) = value;
    }
  };
  for (int k = 0; k <= N; ++k) {
    const double k2 = static_cast<double>(k) * k;
    set_diag_pair(0, k, -(config.kappa0 * k2 + config.mu1 * k2 * k2));
    set_diag_pair(1, k, -config.mu2 * k2);
  }
  Eigen::MatrixXcd coupling = Eigen::MatrixXcd::Zero(nf, nf);
  for (int k = -N; k <= N; ++k)
    for (int kp = -N; kp <= N; ++kp) {
      if (std::abs(k - kp) > N) continue;
      coupling(k + N, kp + N) =
          Complex(0.0, static_cast<double>(k)) * mean_flux.coeff(k - kp);
    }
  f.topRightCorner(nf, nf) = realify_hermitian_map(coupling, N);
  return f;
}

/// Removes the two k = 0 components (temperature and theta) from a matrix
/// on the packed augmented state. The k = 0 modes are undamped in
/// continuous time, so stationary-covariance analysis lives on the k >= 1
/// subspace; after reduction, mode k of block b sits at
/// b * 2 n_modes + 2 (k - 1) (+1 for the imaginary part).
inline Eigen::MatrixXd drop_zero_mode(const Eigen::MatrixXd& m, int n_modes) {
  const int nf = 2 * n_modes + 1;
  if (m.rows() != 2 * nf || m.cols() != 2 * nf)
    throw std::invalid_argument("drop_zero_mode: size mismatch");
  Eigen::MatrixXd out(2 * nf - 2, 2 * nf - 2);
  auto keep = [&](int i) { return i < nf - 1 ? i + 1 : i + 2; };
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j) out(i, j) = m(keep(i), keep(j));
  return out;
}

/// Continuous noise intensity matrix matching the packed state layout.
inline Eigen::MatrixXd continuous_noise_covariance(const ModelConfig& config) {
  const int N = config.n_modes;
  const int nf = 2 * N + 1;
  Eigen::VectorXd q(2 * nf);
  q.head(nf) = packed_noise_variances(config.alpha1, config.beta1, 1.0, N);
  q.tail(nf) = packed_noise_variances(config.alpha2, config.beta2, 1.0, N);
  return q.asDiagonal();
}

}  // namespace diffest
