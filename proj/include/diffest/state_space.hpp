#pragma once

// Discrete linear-Gaussian state-space building blocks shared by the
// filter/smoother engine and the operator assembly.

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace diffest {

/// One time step of the model u' = F u + B w + s, y = H u + eps,
/// with w ~ N(0, Q) and eps ~ N(0, R).
struct LinearStageModel {
  Eigen::MatrixXd F;  // N x N transition
  Eigen::MatrixXd B;  // N x r noise propagator
  Eigen::MatrixXd Q;  // r x r SPD process noise covariance
  Eigen::MatrixXd H;  // m x N measurement evaluation
  Eigen::MatrixXd R;  // m x m SPD measurement noise covariance
  Eigen::VectorXd s;  // N deterministic source

  Eigen::Index state_dim() const { return F.rows(); }
  Eigen::Index noise_dim() const { return Q.rows(); }
  Eigen::Index meas_dim() const { return H.rows(); }

  Eigen::MatrixXd process_cov() const { return B * Q * B.transpose(); }

  void validate() const {
    const auto n = state_dim();
    if (F.cols() != n) throw std::invalid_argument("stage: F not square");
    if (B.rows() != n || B.cols() != Q.rows() || Q.rows() != Q.cols())
      throw std::invalid_argument("stage: B/Q dimensions inconsistent");
    if (H.cols() != n || R.rows() != H.rows() || R.cols() != H.rows())
      throw std::invalid_argument("stage: H/R dimensions inconsistent");
    if (s.size() != n) throw std::invalid_argument("stage: s dimension");
  }
};

enum class BeliefKind { predicted, filtered, smoothed };

inline const char* to_string(BeliefKind kind) {
  switch (kind) {
    case BeliefKind::predicted: return "predicted";
    case BeliefKind::filtered: return "filtered";
    case BeliefKind::smoothed: return "smoothed";
  }
  return "?";
}

/// Gaussian state estimate at one time index.
struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  BeliefKind kind = BeliefKind::filtered;
  int time_index = 0;

  void symmetrize() { cov = 0.5 * (cov + cov.transpose()).eval(); }
};

inline GaussianBelief make_belief(Eigen::VectorXd mean, Eigen::MatrixXd cov,
                                  BeliefKind kind, int time_index) {
  GaussianBelief b{std::move(mean), std::move(cov), kind, time_index};
  b.symmetrize();
  return b;
}

}  // namespace diffest
