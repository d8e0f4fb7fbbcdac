#pragma once

// Test-only oracles, kept independent of the library code paths they check.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "diffest/state_space.hpp"

namespace oracles {

/// Direct forward DFT sum at the odd collocation grid, written without the
/// library transform.
inline Eigen::VectorXcd direct_dft_values(const Eigen::VectorXcd& coeffs) {
  const int n = static_cast<int>(coeffs.size());
  const int n_modes = n / 2;
  Eigen::VectorXcd values(n);
  for (int j = -n_modes; j <= n_modes; ++j) {
    const double x = 2.0 * std::numbers::pi * j / n;
    std::complex<double> acc(0.0, 0.0);
    for (int k = -n_modes; k <= n_modes; ++k)
      acc += coeffs(k + n_modes) *
             std::complex<double>(std::cos(k * x), std::sin(k * x));
    values(j + n_modes) = acc;
  }
  return values;
}

/// Plain textbook Kalman filter (information-form update, explicit
/// inverses), used as the independent reference for filter_pass.
struct ReferenceFilter {
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
};

inline ReferenceFilter reference_filter(
    const std::vector<diffest::LinearStageModel>& stages,
    const std::vector<std::optional<Eigen::VectorXd>>& measurements,
    const Eigen::VectorXd& mean0, const Eigen::MatrixXd& cov0) {
  ReferenceFilter out;
  Eigen::VectorXd mean = mean0;
  Eigen::MatrixXd cov = cov0;
  out.means.push_back(mean);
  out.covs.push_back(cov);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    mean = st.F * mean + st.s;
    cov = st.F * cov * st.F.transpose() + st.B * st.Q * st.B.transpose();
    cov = 0.5 * (cov + cov.transpose()).eval();
    if (measurements[i].has_value()) {
      const Eigen::MatrixXd r_inv = st.R.inverse();
      const Eigen::MatrixXd info =
          cov.inverse() + st.H.transpose() * r_inv * st.H;
      const Eigen::MatrixXd post = info.inverse();
      const Eigen::MatrixXd gain = post * st.H.transpose() * r_inv;
      mean = mean + gain * (*measurements[i] - st.H * mean);
      cov = 0.5 * (post + post.transpose()).eval();
    }
    out.means.push_back(mean);
    out.covs.push_back(cov);
  }
  return out;
}

/// Random stable stage sequence for property suites. Spectral radius of F
/// is scaled below rho_max; Q, R, P0 are SPD by construction.
struct RandomProblem {
  std::vector<diffest::LinearStageModel> stages;
  std::vector<std::optional<Eigen::VectorXd>> measurements;
  Eigen::VectorXd mean0;
  Eigen::MatrixXd cov0;
};

inline RandomProblem random_problem(int n, int m, int n_steps,
                                    std::mt19937_64& rng,
                                    double rho_max = 0.95,
                                    double skip_probability = 0.0) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto randn_mat = [&](int r, int c) {
    Eigen::MatrixXd a(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) a(i, j) = gauss(rng);
    return a;
  };
  auto randn_vec = [&](int r) {
    Eigen::VectorXd v(r);
    for (int i = 0; i < r; ++i) v(i) = gauss(rng);
    return v;
  };
  auto spd = [&](int r, double floor) {
    const Eigen::MatrixXd a = randn_mat(r, r);
    return (a * a.transpose() / r +
            floor * Eigen::MatrixXd::Identity(r, r))
        .eval();
  };

  RandomProblem out;
  out.mean0 = randn_vec(n);
  out.cov0 = spd(n, 0.1);
  for (int i = 0; i < n_steps; ++i) {
    diffest::LinearStageModel st;
    st.F = randn_mat(n, n);
    const double rho =
        std::abs(st.F.eigenvalues().cwiseAbs().maxCoeff());
    st.F *= rho_max / std::max(rho, 1e-12);
    st.B = Eigen::MatrixXd::Identity(n, n);
    st.Q = spd(n, 0.05);
    st.H = randn_mat(m, n);
    st.R = spd(m, 0.05);
    st.s = 0.1 * randn_vec(n);
    out.stages.push_back(std::move(st));
    if (unif(rng) >= skip_probability)
      out.measurements.push_back(randn_vec(m));
    else
      out.measurements.push_back(std::nullopt);
  }
  return out;
}

}  // namespace oracles
