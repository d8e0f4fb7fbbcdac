// Acceptance suite: one test case per criterion, each printing a
// PASS/FAIL line. Run via ctest or directly (tests/acceptance).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "diffest/block_tridiagonal.hpp"
#include "diffest/calibration.hpp"
#include "diffest/harness.hpp"
#include "diffest/kalman.hpp"
#include "diffest/mean_field.hpp"
#include "diffest/operators.hpp"
#include "diffest/simulator.hpp"
#include "diffest/stationary.hpp"
#include "oracles.hpp"

using namespace diffest;
namespace fs = std::filesystem;

namespace {

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("ACCEPTANCE %2d %s — %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  std::fflush(stdout);
}

double now_s() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

ModelConfig twin_model(int m, double sigma) {
  ModelConfig c;
  c.n_modes = 16;
  c.kappa0 = 1.0;
  c.mu1 = 1e-5;
  c.mu2 = 1.0;
  c.alpha1 = 1e-6;
  c.beta1 = 2.0;
  c.alpha2 = 1e-5;
  c.beta2 = 1.0;
  c.dt = 5e-3;
  c.n_steps = 500;
  c.sensor_locations = uniform_sensor_locations(m);
  c.sensor_sigmas = std::vector<double>(m, sigma);
  return c;
}

double twin_kappa(double x) { return 1.0 + 0.3 * std::sin(x); }

struct TwinRun {
  OuterResult result;
  std::vector<double> errors;     // per outer iteration
  double initial_error = 0.0;
  double runtime_s = 0.0;
};

double kappa_error_vs_twin(const MeanTrajectory& means) {
  double num = 0.0, den = 0.0;
  const auto x = SpectralField::grid(16);
  for (const auto& theta : means.theta_bar) {
    const Eigen::VectorXd est = exp_diffusivity(theta).to_physical();
    for (int j = 0; j < est.size(); ++j) {
      const double t = twin_kappa(x[j]);
      num += (est(j) - t) * (est(j) - t);
      den += t * t;
    }
  }
  return std::sqrt(num / den);
}

/// The criterion-6 twin run, shared with criterion 10.
const TwinRun& twin_run() {
  static const TwinRun run = [] {
    TwinRun out;
    const ModelConfig config = twin_model(16, 1e-3);
    const auto t0 = std::chrono::steady_clock::now();
    const TruthTrajectory truth = simulate_truth(
        config, [](double x, double) { return twin_kappa(x); },
        [](double x, double) { return std::cos(x); }, 42);
    const MeasurementSet meas = synthesize_measurements(truth, config, 1, 43);

    SpectralField source(16);
    source.set_mode_pair(1, 0.5);
    OuterOptions opts;
    opts.max_iters = 10;
    opts.tol = 1e-6;
    opts.per_iteration_hook = [&out](int, const MeanTrajectory& means,
                                     const IterationStats&) {
      out.errors.push_back(kappa_error_vs_twin(means));
    };
    out.result = run_outer_iteration(
        config, meas, [&](double) { return source; }, opts);
    out.runtime_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();

    MeanTrajectory init;
    init.theta_bar.assign(config.n_steps + 1, SpectralField(16));
    out.initial_error = kappa_error_vs_twin(init);
    return out;
  }();
  return run;
}

double max_imag_residue(const SpectralField& f) {
  const auto x = f.grid();
  double max_abs = 0.0, max_imag = 0.0;
  for (double xi : x) {
    Complex v(0.0, 0.0);
    for (int k = -f.n_modes(); k <= f.n_modes(); ++k)
      v += f.coeff(k) * std::polar(1.0, k * xi);
    max_abs = std::max(max_abs, std::abs(v));
    max_imag = std::max(max_imag, std::abs(v.imag()));
  }
  return max_imag / std::max(max_abs, 1e-300);
}

}  // namespace

TEST_CASE("criterion 1: smoother equals the block-tridiagonal oracle") {
  std::mt19937_64 rng(20240817);
  auto problem = oracles::random_problem(18, 4, 30, rng, 0.95, 0.15);
  const GaussianBelief prior =
      make_belief(problem.mean0, problem.cov0, BeliefKind::filtered, 0);

  const auto t0 = std::chrono::steady_clock::now();
  const auto filt = filter_pass(problem.stages, problem.measurements, prior);
  const auto smooth = rts_smooth(filt, problem.stages);
  const auto oracle =
      solve_block_tridiagonal(problem.stages, problem.measurements, prior);
  const double runtime =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  double mean_scale = 0.0;
  for (const auto& b : smooth.beliefs)
    mean_scale = std::max(mean_scale, b.mean.norm());
  double worst_mean = 0.0, worst_cov = 0.0;
  for (int i = 0; i <= 30; ++i) {
    worst_mean = std::max(worst_mean,
                          (smooth.beliefs[i].mean - oracle.means[i]).norm() /
                              mean_scale);
    worst_cov = std::max(
        worst_cov, (smooth.beliefs[i].cov.diagonal() -
                    oracle.marginal_covs[i].diagonal())
                           .cwiseAbs()
                           .maxCoeff() /
                       oracle.marginal_covs[i].diagonal().maxCoeff());
  }
  const bool pass = worst_mean < 1e-8 && worst_cov < 1e-8 && runtime < 1.0;
  report(1, pass,
         "means rel " + std::to_string(worst_mean) + ", cov rel " +
             std::to_string(worst_cov) + ", " + std::to_string(runtime) +
             " s");
  CHECK(worst_mean < 1e-8);
  CHECK(worst_cov < 1e-8);
  CHECK(runtime < 1.0);
}

TEST_CASE("criterion 2: contraction holds on 50 randomized instances") {
  std::mt19937_64 rng(7771);
  double worst_update = 0.0, worst_smooth = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    auto problem = oracles::random_problem(6, 2, 20, rng, 0.9, 0.2);
    const GaussianBelief prior =
        make_belief(problem.mean0, problem.cov0, BeliefKind::filtered, 0);
    const auto filt = filter_pass(problem.stages, problem.measurements, prior);
    const auto smooth = rts_smooth(filt, problem.stages);
    for (int i = 1; i <= 20; ++i) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
          filt.predicted[i].cov - filt.filtered[i].cov);
      worst_update = std::min(worst_update, es.eigenvalues().minCoeff());
      worst_smooth = std::max(worst_smooth,
                              smooth.beliefs[i].cov.trace() -
                                  filt.filtered[i].cov.trace());
    }
  }
  const bool pass = worst_update >= -1e-10 && worst_smooth <= 1e-10;
  report(2, pass,
         "min update eigenvalue " + std::to_string(worst_update) +
             ", max trace excess " + std::to_string(worst_smooth));
  CHECK(worst_update >= -1e-10);
  CHECK(worst_smooth <= 1e-10);
}

TEST_CASE("criterion 3: stationary covariance against Monte Carlo and the "
          "quasistationary balance") {
  // Monte Carlo side: the discrete model stage at N_T = 2 with a constant
  // mean flux, against the continuous-time Lyapunov solution.
  ModelConfig config;
  config.n_modes = 2;
  config.kappa0 = 1.0;
  config.mu1 = 0.0;
  config.mu2 = 1.0;
  config.alpha1 = config.alpha2 = 1.0;
  config.beta1 = config.beta2 = 0.0;
  config.dt = 2e-3;
  config.n_steps = 1;
  config.sensor_locations = {0.0};
  config.sensor_sigmas = {0.1};

  const SpectralField kappa = SpectralField::constant(2, 1.0);
  SpectralField flux(2);
  flux.set_mode_pair(0, 0.1);
  const TransitionOperators ops = build_transition(config, kappa, flux);
  const LinearStageModel stage = assemble_stage(ops, config, SpectralField(2));

  const auto stat = lyapunov_stationary(
      drop_zero_mode(continuous_generator(config, flux), 2),
      drop_zero_mode(continuous_noise_covariance(config), 2));

  const int dim = 10, paths = 10000;
  const int steps = 5000;  // ten relaxation times of the slowest mode
  std::mt19937_64 rng(991);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::VectorXd noise_sd = stage.Q.diagonal().cwiseSqrt();
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(dim, paths);
  Eigen::MatrixXd g(dim, paths);
  for (int s = 0; s < steps; ++s) {
    for (int j = 0; j < paths; ++j)
      for (int i = 0; i < dim; ++i) g(i, j) = noise_sd(i) * gauss(rng);
    x = stage.F * x + stage.B * g;
  }
  const Eigen::MatrixXd centered = x.colwise() - x.rowwise().mean();
  const Eigen::MatrixXd sample = centered * centered.transpose() / (paths - 1);
  const Eigen::MatrixXd sample_reduced = drop_zero_mode(sample, 2);
  const double mc_gap =
      (sample_reduced - stat.c0).norm() / stat.c0.norm();

  // Quasistationary side at high k with a small mean flux.
  ModelConfig big = twin_model(4, 0.1);
  big.mu2 = 0.2;
  big.alpha1 = 1.0;
  big.beta1 = 1.0;
  big.alpha2 = 0.5;
  big.beta2 = 0.5;
  SpectralField small_flux(16);
  small_flux.set_mode_pair(0, 0.08);
  const auto stat16 = lyapunov_stationary(
      drop_zero_mode(continuous_generator(big, small_flux), 16),
      drop_zero_mode(continuous_noise_covariance(big), 16));
  double worst_formula = 0.0;
  for (int k = 8; k <= 16; ++k) {
    const int it = 2 * (k - 1);
    const int ih = 2 * 16 + 2 * (k - 1);
    const double lyap_t = stat16.c0(it, it);
    const double lyap_th = stat16.c0(ih, ih);
    worst_formula = std::max(
        worst_formula,
        std::abs(lyap_t - 0.5 * stationary_temperature_variance(big, k)) /
            (0.5 * stationary_temperature_variance(big, k)));
    worst_formula = std::max(
        worst_formula,
        std::abs(lyap_th - 0.5 * stationary_theta_variance(big, k)) /
            (0.5 * stationary_theta_variance(big, k)));
  }

  const bool pass = mc_gap < 0.05 && worst_formula < 0.10;
  report(3, pass,
         "Monte Carlo gap " + std::to_string(mc_gap) +
             ", quasistationary gap " + std::to_string(worst_formula));
  CHECK(mc_gap < 0.05);
  CHECK(worst_formula < 0.10);
}

TEST_CASE("criterion 4: weak second order of the theta step") {
  // E[theta_2(1)] against the exact OU mean exp(-mu2 k^2 t).
  ModelConfig config;
  config.n_modes = 2;
  config.kappa0 = 1.0;
  config.mu1 = 0.0;
  config.mu2 = 1.0;
  config.alpha1 = 0.0;
  config.alpha2 = 1e-6;
  config.beta1 = config.beta2 = 0.0;
  config.n_steps = 1;
  config.sensor_locations = {0.0};
  config.sensor_sigmas = {0.1};

  SpectralField theta0(2);
  theta0.set_mode_pair(2, 0.5);  // cos(2x)
  SpectralField t0(2);

  const std::vector<double> dts = {0.1, 0.05, 0.025};
  std::vector<double> errors;
  const int paths = 10000;
  for (double dt : dts) {
    ModelConfig c = config;
    c.dt = dt;
    c.n_steps = static_cast<int>(std::lround(1.0 / dt));
    double acc = 0.0;
    for (int p = 0; p < paths; ++p) {
      SimulationOptions opts;
      opts.initial_temperature = t0;
      opts.initial_theta_fluctuation = theta0;
      const TruthTrajectory truth = simulate_truth(
          c, [](double, double) { return 1.0; },
          [](double, double) { return 0.0; }, 50000 + p, opts);
      acc += truth.theta[c.n_steps].coeff(2).real();
    }
    const double mc_mean = acc / paths;
    const double exact = 0.5 * std::exp(-config.mu2 * 4.0 * 1.0);
    errors.push_back(std::abs(mc_mean - exact));
  }

  // Log-log least squares slope over the three levels.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    const double lx = std::log(dts[i]);
    const double ly = std::log(errors[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double n = static_cast<double>(dts.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const bool pass = slope > 1.8 && slope < 2.2;
  report(4, pass, "observed weak-error slope " + std::to_string(slope));
  CHECK(slope > 1.8);
  CHECK(slope < 2.2);
}

TEST_CASE("criterion 5: temperature-theta cross-term decays like 1/k") {
  ModelConfig config = twin_model(4, 0.1);
  config.mu2 = 0.2;
  config.alpha1 = 1.0;
  config.beta1 = 0.0;
  config.alpha2 = 0.5;
  config.beta2 = 0.0;
  SpectralField flux(16);
  flux.set_mode_pair(0, 0.08);
  const auto stat = lyapunov_stationary(
      drop_zero_mode(continuous_generator(config, flux), 16),
      drop_zero_mode(continuous_noise_covariance(config), 16));
  auto ratio = [&](int k) {
    const int it = 2 * (k - 1);
    const int ih = 2 * 16 + 2 * (k - 1);
    const Eigen::MatrixXd cross = stat.c0.block(it, ih, 2, 2);
    const Eigen::MatrixXd tt = stat.c0.block(it, it, 2, 2);
    const Eigen::MatrixXd hh = stat.c0.block(ih, ih, 2, 2);
    return cross.norm() / std::sqrt(tt.norm() * hh.norm());
  };
  const double r8 = ratio(8), r16 = ratio(16);
  const bool pass = r16 <= 0.6 * r8;
  report(5, pass,
         "normalized cross-term " + std::to_string(r16) + " at k=16 vs " +
             std::to_string(r8) + " at k=8");
  CHECK(r16 <= 0.6 * r8);
}

TEST_CASE("criterion 6: twin experiment recovers the diffusivity") {
  const TwinRun& run = twin_run();
  REQUIRE(run.errors.size() >= 3);
  const double final_error = run.errors.back();
  bool monotone = run.errors[0] <= run.initial_error;
  for (int i = 1; i < 3; ++i)
    monotone = monotone && (run.errors[i] <= run.errors[i - 1] + 1e-12);
  const bool pass =
      final_error <= 0.15 && monotone && run.runtime_s < 300.0;
  report(6, pass,
         "final kappa error " + std::to_string(final_error) + " after " +
             std::to_string(run.errors.size()) + " iterations, " +
             std::to_string(run.runtime_s) + " s");
  CHECK(final_error <= 0.15);
  CHECK(monotone);
  CHECK(run.runtime_s < 300.0);
}

TEST_CASE("criterion 7: error is monotone in noise level and sensor count") {
  const fs::path dir = fs::temp_directory_path() / "diffest_acceptance_sweep";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const json base_config = {
      {"format", "diffest-config/v1"},
      {"model",
       {{"n_modes", 16},
        {"kappa0", 1.0},
        {"mu1", 1e-5},
        {"mu2", 1.0},
        {"alpha1", 1e-6},
        {"beta1", 2.0},
        {"alpha2", 1e-5},
        {"beta2", 1.0},
        {"dt", 5e-3},
        {"n_steps", 500},
        {"sensors", {{"count", 16}, {"sigma", 1e-3}}}}},
      {"source", json::array({{{"k", 1}, {"amplitude", 1.0}}})},
      {"truth",
       {{"kappa",
         json::array({{{"k", 0}, {"amplitude", 1.0}},
                      {{"k", 1},
                       {"amplitude", 0.3},
                       {"phase", -1.5707963267948966}}})}}},
      {"seed", 42},
      {"measure_every", 1},
      {"estimate", {{"max_iters", 6}, {"tol", 1e-8}}}};

  auto run_and_read = [&](const json& cfg, const json& sweep,
                          const std::string& name) {
    std::ofstream(dir / (name + "_config.json")) << cfg.dump(2);
    std::ofstream(dir / (name + "_sweep.json")) << sweep.dump(2);
    const int code = cmd_sweep(dir / (name + "_config.json"),
                               dir / (name + "_sweep.json"), dir / name);
    REQUIRE(code == 0);
    std::ifstream in(dir / name / "sweep_summary.tsv");
    std::string line;
    std::vector<std::pair<double, double>> rows;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      double value, err, flag;
      ss >> value >> err >> flag;
      rows.emplace_back(value, err);
    }
    return rows;
  };

  const json sigma_sweep = {{"format", "diffest-sweep/v1"},
                            {"parameter", "sigma"},
                            {"values", {1e-1, 1e-2, 1e-3}}};
  const auto sigma_rows = run_and_read(base_config, sigma_sweep, "sigma");
  REQUIRE(sigma_rows.size() == 3);
  const bool sigma_monotone = sigma_rows[0].second >= sigma_rows[1].second &&
                              sigma_rows[1].second >= sigma_rows[2].second;

  json m_config = base_config;
  m_config["model"]["sensors"]["sigma"] = 3e-2;
  const json m_sweep = {{"format", "diffest-sweep/v1"},
                        {"parameter", "sensor_count"},
                        {"values", {4, 8, 16}}};
  const auto m_rows = run_and_read(m_config, m_sweep, "sensors");
  REQUIRE(m_rows.size() == 3);
  const bool m_monotone = m_rows[0].second >= m_rows[1].second &&
                          m_rows[1].second >= m_rows[2].second;

  const bool pass = sigma_monotone && m_monotone;
  std::ostringstream detail;
  detail << "sigma errors";
  for (const auto& [v, e] : sigma_rows) detail << " " << e;
  detail << "; sensor errors";
  for (const auto& [v, e] : m_rows) detail << " " << e;
  report(7, pass, detail.str());
  CHECK(sigma_monotone);
  CHECK(m_monotone);
}

TEST_CASE("criterion 8: objective is stationary at the smoothed trajectory") {
  std::mt19937_64 rng(20240817);  // same toy instance as criterion 1
  auto problem = oracles::random_problem(18, 4, 30, rng, 0.95, 0.15);
  const GaussianBelief prior =
      make_belief(problem.mean0, problem.cov0, BeliefKind::filtered, 0);
  const auto filt = filter_pass(problem.stages, problem.measurements, prior);
  const auto smooth = rts_smooth(filt, problem.stages);

  std::vector<Eigen::VectorXd> traj;
  for (const auto& b : smooth.beliefs) traj.push_back(b.mean);
  auto value = [&](const std::vector<Eigen::VectorXd>& t) {
    return least_squares_objective(problem.stages, problem.measurements,
                                   prior, t)
        .total;
  };
  double grad2 = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < traj.size(); ++i)
    for (int j = 0; j < traj[i].size(); ++j) {
      auto plus = traj, minus = traj;
      plus[i](j) += h;
      minus[i](j) -= h;
      grad2 += std::pow((value(plus) - value(minus)) / (2 * h), 2);
    }
  const double grad_norm = std::sqrt(grad2);

  // Curvature scale: largest eigenvalue of the dense normal-equation
  // matrix, times the trajectory norm.
  const int n = 18, steps = 30, dim = n * (steps + 1);
  Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
  hess.topLeftCorner(n, n) = prior.cov.inverse();
  for (int i = 0; i < steps; ++i) {
    const auto& st = problem.stages[i];
    Eigen::MatrixXd qb = st.process_cov();
    qb.diagonal().array() += 1e-12 * qb.trace() / n;
    const Eigen::MatrixXd qbi = qb.inverse();
    hess.block(i * n, i * n, n, n) += st.F.transpose() * qbi * st.F;
    hess.block((i + 1) * n, (i + 1) * n, n, n) += qbi;
    hess.block(i * n, (i + 1) * n, n, n) -= st.F.transpose() * qbi;
    hess.block((i + 1) * n, i * n, n, n) -= qbi * st.F;
    if (problem.measurements[i].has_value())
      hess.block((i + 1) * n, (i + 1) * n, n, n) +=
          st.H.transpose() * st.R.inverse() * st.H;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
  double traj_norm2 = 0.0;
  for (const auto& u : traj) traj_norm2 += u.squaredNorm();
  const double scale =
      2.0 * es.eigenvalues().maxCoeff() * std::sqrt(traj_norm2);

  const bool pass = grad_norm <= 1e-6 * scale;
  report(8, pass,
         "gradient norm " + std::to_string(grad_norm) + " vs scale " +
             std::to_string(scale));
  CHECK(grad_norm <= 1e-6 * scale);
}

TEST_CASE("criterion 9: mode-space reduction for uniform sensors") {
  ModelConfig config;
  config.n_modes = 10;
  config.kappa0 = 1.0;
  config.mu2 = 1.0;
  config.alpha1 = config.alpha2 = 1.0;
  config.beta1 = config.beta2 = 0.0;
  config.dt = 0.01;
  config.n_steps = 1;
  const int m = 8;
  const double sigma = 0.1;
  config.sensor_locations = uniform_sensor_locations(m);
  config.sensor_sigmas = std::vector<double>(m, sigma);

  auto [h, r] = mode_space_measurement(config);
  double worst_r = 0.0, worst_h = 0.0;
  for (int k = 0; k <= m / 2; ++k)
    for (int kp = 0; kp <= m / 2; ++kp) {
      const Complex expected =
          (k == kp) ? Complex(m * sigma * sigma, 0.0) : Complex(0.0, 0.0);
      worst_r = std::max(worst_r, std::abs(r(k, kp) - expected));
    }
  for (int k = 0; k <= m / 2; ++k)
    for (int kp = -10; kp <= 10; ++kp) {
      Complex expected(0.0, 0.0);
      if ((k - kp) % m == 0) {
        const int p = (k - kp) / m;
        const double sign = (p * (m + 1)) % 2 == 0 ? 1.0 : -1.0;
        expected = Complex(sign * m, 0.0);
      }
      worst_h = std::max(worst_h, std::abs(h(k, kp + 10) - expected));
    }
  const bool pass = worst_r < 1e-12 && worst_h < 1e-12;
  report(9, pass,
         "max R deviation " + std::to_string(worst_r) +
             ", max H deviation " + std::to_string(worst_h));
  CHECK(worst_r < 1e-12);
  CHECK(worst_h < 1e-12);
}

TEST_CASE("criterion 10: reality and positivity across the twin run") {
  const TwinRun& run = twin_run();
  const double kappa_floor = 1e-6;
  double worst_residue = 0.0, min_kappa = 1e30;
  const int nf = 33;
  for (std::size_t i = 0; i < run.result.means.t_bar.size(); ++i) {
    const SpectralField t_hat =
        unpack_hermitian(run.result.smoother.beliefs[i].mean.head(nf));
    worst_residue = std::max(worst_residue, max_imag_residue(t_hat));
    worst_residue =
        std::max(worst_residue, max_imag_residue(run.result.means.t_bar[i]));
    worst_residue = std::max(
        worst_residue, max_imag_residue(run.result.means.theta_bar[i]));
    const Eigen::VectorXd kappa =
        exp_diffusivity(run.result.means.theta_bar[i]).to_physical();
    min_kappa = std::min(min_kappa, kappa.minCoeff());
  }
  const bool pass = worst_residue <= 1e-10 && min_kappa >= kappa_floor;
  report(10, pass,
         "max imaginary residue " + std::to_string(worst_residue) +
             ", min kappa " + std::to_string(min_kappa));
  CHECK(worst_residue <= 1e-10);
  CHECK(min_kappa >= kappa_floor);
}
