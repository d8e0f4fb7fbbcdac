#pragma once

// Stationary covariance of a stable linear SDE du = F u dt + dW,
// cov(dW) = Q dt: the unique solution of F C + C F^T + Q = 0, computed by
// complex Schur reduction and triangular back-substitution. Every accepted
// solution is verified against the residual bound 1e-10 ||Q||_F.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

#include <complex>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace diffest {

struct StationaryCovariance {
  Eigen::MatrixXd c0;  // equal-time covariance C(0)
};

inline std::vector<std::complex<double>> matrix_eigenvalues(
    const Eigen::MatrixXd& f) {
  Eigen::ComplexSchur<Eigen::MatrixXcd> schur(f.cast<std::complex<double>>(),
                                              false);
  if (schur.info() != Eigen::Success)
    throw std::runtime_error("matrix_eigenvalues: Schur did not converge");
  std::vector<std::complex<double>> out(f.rows());
  for (Eigen::Index i = 0; i < f.rows(); ++i)
    out[i] = schur.matrixT()(i, i);
  return out;
}

inline StationaryCovariance lyapunov_stationary(const Eigen::MatrixXd& f,
                                                const Eigen::MatrixXd& q) {
  const Eigen::Index n = f.rows();
  if (f.cols() != n || q.rows() != n || q.cols() != n)
    throw std::invalid_argument("lyapunov_stationary: size mismatch");

  Eigen::ComplexSchur<Eigen::MatrixXcd> schur(f.cast<std::complex<double>>(),
                                              true);
  if (schur.info() != Eigen::Success)
    throw std::runtime_error("lyapunov_stationary: Schur did not converge");
  const Eigen::MatrixXcd& t = schur.matrixT();
  const Eigen::MatrixXcd& u = schur.matrixU();

  std::ostringstream offenders;
  bool hurwitz = true;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (t(i, i).real() >= 0.0) {
      hurwitz = false;
      offenders << " (" << t(i, i).real() << (t(i, i).imag() < 0 ? "-" : "+")
                << std::abs(t(i, i).imag()) << "i)";
    }
  }
  if (!hurwitz)
    throw std::runtime_error(
        "lyapunov_stationary: generator is not Hurwitz; eigenvalues with "
        "nonnegative real part:" + offenders.str());

  // T Y + Y T^H + U^H Q U = 0 with T upper triangular; the (i, j) equation
  // couples only to entries below row i and left of column j.
  const Eigen::MatrixXcd qt = u.adjoint() * q.cast<std::complex<double>>() * u;
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    for (Eigen::Index j = n - 1; j >= 0; --j) {
      std::complex<double> acc = qt(i, j);
      for (Eigen::Index k = i + 1; k < n; ++k) acc += t(i, k) * y(k, j);
      for (Eigen::Index k = j + 1; k < n; ++k)
        acc += y(i, k) * std::conj(t(j, k));
      y(i, j) = -acc / (t(i, i) + std::conj(t(j, j)));
    }
  }
  Eigen::MatrixXd c = (u * y * u.adjoint()).real();
  c = 0.5 * (c + c.transpose()).eval();

  const double residual = (f * c + c * f.transpose() + q).norm();
  if (residual > 1e-10 * q.norm())
    throw std::runtime_error(
        "lyapunov_stationary: residual " + std::to_string(residual) +
        " exceeds 1e-10 ||Q||");
  return StationaryCovariance{std::move(c)};
}

/// Lagged stationary covariance C(tau) = C(0) exp(tau F^T), tau >= 0.
inline Eigen::MatrixXd lagged_covariance(const StationaryCovariance& stat,
                                         const Eigen::MatrixXd& f,
                                         double tau) {
  if (tau < 0.0)
    throw std::invalid_argument("lagged_covariance: tau must be >= 0");
  const Eigen::MatrixXd propagator = (tau * f.transpose()).exp();
  return stat.c0 * propagator;
}

}  // namespace diffest
