#pragma once

// Discrete-time Kalman filter and fixed-interval Rauch-Tung-Striebel
// smoother over sequences of LinearStageModel. Stage i advances the state
// from time index i to i+1; a measurement, when present, is assimilated at
// index i+1 with that stage's (H, R). Covariances are symmetrized after
// every step and all inversions go through Cholesky factorizations.

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffest/state_space.hpp"

namespace diffest {

namespace detail {

inline Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& m,
                                               const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string("kalman: ") + what +
                             " is not positive definite");
  return llt;
}

}  // namespace detail

/// Time-evolution update (prediction): mean' = F mean + s,
/// cov' = F cov F^T + B Q B^T.
inline GaussianBelief predict(const GaussianBelief& belief,
                              const LinearStageModel& stage) {
  if (belief.kind != BeliefKind::filtered)
    throw std::invalid_argument("predict: expected a filtered belief");
  if (belief.mean.size() != stage.state_dim())
    throw std::invalid_argument("predict: state dimension mismatch");
  Eigen::VectorXd mean = stage.F * belief.mean + stage.s;
  Eigen::MatrixXd cov =
      stage.F * belief.cov * stage.F.transpose() + stage.process_cov();
  return make_belief(std::move(mean), std::move(cov), BeliefKind::predicted,
                     belief.time_index + 1);
}

/// Measurement update in innovation form: K = P H^T (H P H^T + R)^{-1}.
/// Algebraically equivalent to the information form
/// P'^{-1} = P^{-1} + H^T R^{-1} H (see update_information).
inline GaussianBelief update(const GaussianBelief& belief,
                             const LinearStageModel& stage,
                             const Eigen::VectorXd& y) {
  if (belief.kind != BeliefKind::predicted)
    throw std::invalid_argument("update: expected a predicted belief");
  if (y.size() != stage.meas_dim())
    throw std::invalid_argument("update: measurement dimension mismatch");
  detail::checked_llt(stage.R, "R");
  const Eigen::MatrixXd pht = belief.cov * stage.H.transpose();
  Eigen::MatrixXd innov_cov = stage.H * pht + stage.R;
  auto llt = detail::checked_llt(innov_cov, "innovation covariance");
  const Eigen::MatrixXd gain = llt.solve(pht.transpose()).transpose();
  Eigen::VectorXd mean = belief.mean + gain * (y - stage.H * belief.mean);
  Eigen::MatrixXd cov = belief.cov - gain * innov_cov * gain.transpose();
  return make_belief(std::move(mean), std::move(cov), BeliefKind::filtered,
                     belief.time_index);
}

/// Information-form measurement update; kept as an independent algebraic
/// route for the gain-equivalence property.
inline GaussianBelief update_information(const GaussianBelief& belief,
                                         const LinearStageModel& stage,
                                         const Eigen::VectorXd& y) {
  if (belief.kind != BeliefKind::predicted)
    throw std::invalid_argument("update_information: expected predicted");
  const Eigen::MatrixXd r_inv =
      detail::checked_llt(stage.R, "R").solve(
          Eigen::MatrixXd::Identity(stage.meas_dim(), stage.meas_dim()));
  const Eigen::MatrixXd p_inv =
      detail::checked_llt(belief.cov, "P").solve(
          Eigen::MatrixXd::Identity(belief.cov.rows(), belief.cov.cols()));
  Eigen::MatrixXd info = p_inv + stage.H.transpose() * r_inv * stage.H;
  Eigen::MatrixXd cov = detail::checked_llt(info, "posterior information")
                            .solve(Eigen::MatrixXd::Identity(info.rows(),
                                                             info.cols()));
  const Eigen::MatrixXd gain = cov * stage.H.transpose() * r_inv;
  Eigen::VectorXd mean = belief.mean + gain * (y - stage.H * belief.mean);
  return make_belief(std::move(mean), std::move(cov), BeliefKind::filtered,
                     belief.time_index);
}

/// Forward filter output: beliefs at indices 0..N_f. predicted[0] is a copy
/// of the prior; filtered[i] equals predicted[i] on steps without a
/// measurement.
struct FilterResult {
  std::vector<GaussianBelief> predicted;
  std::vector<GaussianBelief> filtered;

  int n_stages() const { return static_cast<int>(filtered.size()) - 1; }
};

using MeasurementSequence = std::vector<std::optional<Eigen::VectorXd>>;

inline FilterResult filter_pass(std::span<const LinearStageModel> stages,
                                const MeasurementSequence& measurements,
                                const GaussianBelief& prior) {
  if (measurements.size() != stages.size())
    throw std::invalid_argument(
        "filter_pass: measurements must align with stages (one optional "
        "measurement per step)");
  FilterResult out;
  out.predicted.reserve(stages.size() + 1);
  out.filtered.reserve(stages.size() + 1);
  GaussianBelief current = prior;
  current.kind = BeliefKind::filtered;
  current.time_index = 0;
  out.predicted.push_back(current);
  out.filtered.push_back(current);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    GaussianBelief pred = predict(current, stages[i]);
    out.predicted.push_back(pred);
    if (measurements[i].has_value()) {
      current = update(pred, stages[i], *measurements[i]);
    } else {
      current = pred;
      current.kind = BeliefKind::filtered;
    }
    out.filtered.push_back(current);
  }
  return out;
}

/// Fixed-interval smoother output plus the per-step pieces of the
/// generalized least-squares functional evaluated at the smoothed means.
struct SmootherResult {
  std::vector<GaussianBelief> beliefs;   // smoothed, indices 0..N_f
  std::vector<GaussianBelief> filtered;  // copy of the forward pass
  std::vector<double> loglike_terms;     // per-step objective contributions
};

/// Backward RTS correction. Requires the complete forward pass; the gain at
/// step i is P(i|i) F_i^T P(i+1|i)^{-1}.
inline SmootherResult rts_smooth(const FilterResult& filter_output,
                                 std::span<const LinearStageModel> stages) {
  const int n = filter_output.n_stages();
  if (static_cast<int>(stages.size()) != n)
    throw std::invalid_argument("rts_smooth: stage count mismatch");
  SmootherResult out;
  out.filtered = filter_output.filtered;
  out.beliefs.resize(n + 1);
  out.beliefs[n] = filter_output.filtered[n];
  out.beliefs[n].kind = BeliefKind::smoothed;
  for (int i = n - 1; i >= 0; --i) {
    const GaussianBelief& filt = filter_output.filtered[i];
    const GaussianBelief& pred = filter_output.predicted[i + 1];
    Eigen::LLT<Eigen::MatrixXd> llt(pred.cov);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error(
          "rts_smooth: singular predicted covariance at step " +
          std::to_string(i + 1));
    // gain^T = P(i+1|i)^{-1} F_i P(i|i)
    const Eigen::MatrixXd gain_t = llt.solve(stages[i].F * filt.cov);
    const Eigen::MatrixXd gain = gain_t.transpose();
    Eigen::VectorXd mean =
        filt.mean + gain * (out.beliefs[i + 1].mean - pred.mean);
    Eigen::MatrixXd cov =
        filt.cov +
        gain * (out.beliefs[i + 1].cov - pred.cov) * gain.transpose();
    out.beliefs[i] =
        make_belief(std::move(mean), std::move(cov), BeliefKind::smoothed, i);
  }
  return out;
}

}  // namespace diffest
