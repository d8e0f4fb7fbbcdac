#pragma once

// Generalized least-squares route to the fixed-interval smoother: the
// normal equations of the functional
//
//   l(u) = (u_0 - u0)^T P0^{-1} (u_0 - u0)
//        + sum_i (y_i - H u_{i+1})^T R^{-1} (y_i - H u_{i+1})
//        + sum_i (u_{i+1} - F_i u_i - s_i)^T Qb_i^{-1} (u_{i+1} - F_i u_i - s_i)
//
// form a symmetric block-tridiagonal system, solved here by a block
// Cholesky forward/backward sweep. Marginal covariances are the diagonal
// blocks of the inverse, obtained from the backward recursion
// Sigma_jj = S_j^{-1} + G_j Sigma_{j+1,j+1} G_j^T with G_j = S_j^{-1} U_j.
// This path is algebraically identical to the RTS smoother and serves as
// its independent cross-check.

#include <Eigen/Dense>

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffest/kalman.hpp"
#include "diffest/state_space.hpp"

namespace diffest {

namespace detail {

/// Qb = B Q B^T, nudged by eps*I with eps = 1e-12 tr(Qb)/N so the
/// least-squares route stays well posed when Qb is only semidefinite.
/// The filter path never inverts Qb.
inline Eigen::MatrixXd regularized_process_cov(const LinearStageModel& stage) {
  Eigen::MatrixXd qb = stage.process_cov();
  const double eps = 1e-12 * qb.trace() / static_cast<double>(qb.rows());
  qb.diagonal().array() += eps;
  return qb;
}

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m,
                                   const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string("block_tridiagonal: ") + what +
                             " is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
}

}  // namespace detail

struct BlockTridiagonalSolution {
  std::vector<Eigen::VectorXd> means;          // indices 0..N_f
  std::vector<Eigen::MatrixXd> marginal_covs;  // diagonal blocks of Sigma
};

inline BlockTridiagonalSolution solve_block_tridiagonal(
    std::span<const LinearStageModel> stages,
    const MeasurementSequence& measurements, const GaussianBelief& prior) {
  const int n = static_cast<int>(stages.size());
  if (static_cast<int>(measurements.size()) != n)
    throw std::invalid_argument("solve_block_tridiagonal: alignment");
  const Eigen::Index dim = prior.mean.size();

  std::vector<Eigen::MatrixXd> qb_inv(n);
  for (int i = 0; i < n; ++i)
    qb_inv[i] = detail::spd_inverse(detail::regularized_process_cov(stages[i]),
                                    "process covariance");

  // Diagonal blocks D_j, off-diagonal blocks U_j = -F_j^T Qb_j^{-1}
  // (block (j, j+1)), and the right-hand side.
  std::vector<Eigen::MatrixXd> diag(n + 1);
  std::vector<Eigen::MatrixXd> upper(n);
  std::vector<Eigen::VectorXd> rhs(n + 1);

  diag[0] = detail::spd_inverse(prior.cov, "prior covariance");
  rhs[0] = diag[0] * prior.mean;
  for (int j = 1; j <= n; ++j) {
    diag[j] = qb_inv[j - 1];
    rhs[j] = qb_inv[j - 1] * stages[j - 1].s;
  }
  for (int j = 0; j < n; ++j) {
    diag[j] += stages[j].F.transpose() * qb_inv[j] * stages[j].F;
    rhs[j] -= stages[j].F.transpose() * (qb_inv[j] * stages[j].s);
    upper[j] = -stages[j].F.transpose() * qb_inv[j];
  }
  for (int j = 1; j <= n; ++j) {
    if (!measurements[j - 1].has_value()) continue;
    const LinearStageModel& st = stages[j - 1];
    const Eigen::MatrixXd r_inv = detail::spd_inverse(st.R, "R");
    diag[j] += st.H.transpose() * r_inv * st.H;
    rhs[j] += st.H.transpose() * (r_inv * *measurements[j - 1]);
  }

  // Forward block elimination: S_j = D_j - U_{j-1}^T S_{j-1}^{-1} U_{j-1}.
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
  factors.reserve(n + 1);
  std::vector<Eigen::VectorXd> z(n + 1);
  Eigen::MatrixXd s = diag[0];
  for (int j = 0; j <= n; ++j) {
    if (j > 0)
      s = diag[j] - upper[j - 1].transpose() *
                        factors[j - 1].solve(upper[j - 1]);
    factors.emplace_back(s);
    if (factors[j].info() != Eigen::Success)
      throw std::runtime_error(
          "solve_block_tridiagonal: assembled system is not positive "
          "definite at block " + std::to_string(j) +
          " (check Q/R configuration)");
    z[j] = rhs[j];
    if (j > 0)
      z[j] -= upper[j - 1].transpose() * factors[j - 1].solve(z[j - 1]);
  }

  BlockTridiagonalSolution out;
  out.means.assign(n + 1, Eigen::VectorXd::Zero(dim));
  out.marginal_covs.assign(n + 1, Eigen::MatrixXd::Zero(dim, dim));
  out.means[n] = factors[n].solve(z[n]);
  out.marginal_covs[n] = factors[n].solve(Eigen::MatrixXd::Identity(dim, dim));
  for (int j = n - 1; j >= 0; --j) {
    out.means[j] = factors[j].solve(z[j] - upper[j] * out.means[j + 1]);
    const Eigen::MatrixXd g = factors[j].solve(upper[j]);
    Eigen::MatrixXd cov =
        factors[j].solve(Eigen::MatrixXd::Identity(dim, dim)) +
        g * out.marginal_covs[j + 1] * g.transpose();
    out.marginal_covs[j] = 0.5 * (cov + cov.transpose());
  }
  return out;
}

/// Value of the generalized least-squares functional at a candidate state
/// trajectory, with its decomposition. The theta-innovation part of the
/// dynamics term is the discrete smoothness penalty on the parameter path.
struct ObjectiveBreakdown {
  double total = 0.0;
  double prior_term = 0.0;
  double data_term = 0.0;
  double innovation_term = 0.0;
  std::vector<double> per_step;  // data + innovation contribution per stage
};

inline ObjectiveBreakdown least_squares_objective(
    std::span<const LinearStageModel> stages,
    const MeasurementSequence& measurements, const GaussianBelief& prior,
    std::span<const Eigen::VectorXd> trajectory) {
  const int n = static_cast<int>(stages.size());
  if (static_cast<int>(trajectory.size()) != n + 1)
    throw std::invalid_argument(
        "least_squares_objective: trajectory must have N_f + 1 states");
  if (static_cast<int>(measurements.size()) != n)
    throw std::invalid_argument("least_squares_objective: alignment");

  ObjectiveBreakdown out;
  out.per_step.resize(n, 0.0);
  {
    const Eigen::VectorXd r = trajectory[0] - prior.mean;
    out.prior_term =
        r.dot(detail::spd_inverse(prior.cov, "prior covariance") * r);
  }
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd qb_inv = detail::spd_inverse(
        detail::regularized_process_cov(stages[i]), "process covariance");
    const Eigen::VectorXd innov =
        trajectory[i + 1] - stages[i].F * trajectory[i] - stages[i].s;
    const double w = innov.dot(qb_inv * innov);
    out.innovation_term += w;
    out.per_step[i] += w;
    if (measurements[i].has_value()) {
      const Eigen::VectorXd resid =
          *measurements[i] - stages[i].H * trajectory[i + 1];
      const Eigen::MatrixXd r_inv = detail::spd_inverse(stages[i].R, "R");
      const double d = resid.dot(r_inv * resid);
      out.data_term += d;
      out.per_step[i] += d;
    }
  }
  out.total = out.prior_term + out.data_term + out.innovation_term;
  return out;
}

/// Fills SmootherResult::loglike_terms with the per-step objective pieces
/// evaluated at the smoothed means.
inline void annotate_objective(SmootherResult& smoother,
                               std::span<const LinearStageModel> stages,
                               const MeasurementSequence& measurements,
                               const GaussianBelief& prior) {
  std::vector<Eigen::VectorXd> traj;
  traj.reserve(smoother.beliefs.size());
  for (const auto& b : smoother.beliefs) traj.push_back(b.mean);
  smoother.loglike_terms =
      least_squares_objective(stages, measurements, prior, traj).per_step;
}

}  // namespace diffest
