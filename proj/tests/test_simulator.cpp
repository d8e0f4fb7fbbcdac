#include "doctest.h"

#include <cmath>
#include <random>

#include "diffest/simulator.hpp"

using namespace diffest;

namespace {

ModelConfig twin_config(int n_modes, double dt, int n_steps) {
  ModelConfig c;
  c.n_modes = n_modes;
  c.kappa0 = 1.0;
  c.mu1 = 0.0;
  c.mu2 = 1.0;
  c.alpha1 = 0.0;
  c.alpha2 = 0.0;
  c.beta1 = c.beta2 = 0.0;
  c.dt = dt;
  c.n_steps = n_steps;
  c.sensor_locations = uniform_sensor_locations(4);
  c.sensor_sigmas = std::vector<double>(4, 0.0);
  return c;
}

const SpaceTimeFn unit_kappa = [](double, double) { return 1.0; };
const SpaceTimeFn zero_source = [](double, double) { return 0.0; };

}  // namespace

TEST_CASE("noise-free constant-kappa run decays mode 1 like f_1^n") {
  ModelConfig config = twin_config(4, 0.05, 40);
  SimulationOptions opts;
  SpectralField t0(4);
  t0.set_mode_pair(1, 0.5);  // cos x
  opts.initial_temperature = t0;
  const TruthTrajectory truth =
      simulate_truth(config, unit_kappa, zero_source, 1, opts);
  const double f1 = (1.0 - 0.5 * config.dt) / (1.0 + 0.5 * config.dt);
  double expected = 0.5;
  for (int n = 0; n <= config.n_steps; ++n) {
    CHECK(std::abs(truth.temperature[n].coeff(1) - expected) < 1e-14);
    CHECK(std::abs(truth.temperature[n].coeff(2)) < 1e-14);
    expected *= f1;
  }
}

TEST_CASE("zero theta noise keeps theta = ln kappa_true for all steps") {
  ModelConfig config = twin_config(6, 0.02, 25);
  const SpaceTimeFn kappa = [](double x, double) {
    return 1.0 + 0.3 * std::sin(x);
  };
  const TruthTrajectory truth = simulate_truth(
      config, kappa, [](double x, double) { return std::cos(x); }, 3);
  const auto x = SpectralField::grid(6);
  for (int n = 0; n <= config.n_steps; n += 5) {
    const Eigen::VectorXd theta = truth.theta[n].to_physical();
    for (int j = 0; j < theta.size(); ++j)
      CHECK(theta(j) ==
            doctest::Approx(std::log(1.0 + 0.3 * std::sin(x[j])))
                .epsilon(1e-9));
  }
}

TEST_CASE("identical seeds reproduce trajectories and measurements exactly") {
  ModelConfig config = twin_config(5, 0.01, 30);
  config.alpha1 = 0.1;
  config.alpha2 = 0.05;
  config.beta1 = 1.0;
  config.sensor_sigmas = std::vector<double>(4, 0.05);
  const SpaceTimeFn kappa = [](double x, double t) {
    return 1.0 + 0.2 * std::cos(x) * std::cos(0.3 * t);
  };
  const SpaceTimeFn source = [](double x, double) { return std::sin(2 * x); };
  const TruthTrajectory a = simulate_truth(config, kappa, source, 77);
  const TruthTrajectory b = simulate_truth(config, kappa, source, 77);
  for (int n = 0; n <= config.n_steps; ++n) {
    CHECK((a.temperature[n].coeffs() - b.temperature[n].coeffs()).norm() ==
          0.0);
    CHECK((a.theta[n].coeffs() - b.theta[n].coeffs()).norm() == 0.0);
  }
  const MeasurementSet ma = synthesize_measurements(a, config, 1, 5);
  const MeasurementSet mb = synthesize_measurements(b, config, 1, 5);
  CHECK((ma.values - mb.values).norm() == 0.0);

  const TruthTrajectory c = simulate_truth(config, kappa, source, 78);
  CHECK((a.temperature[config.n_steps].coeffs() -
         c.temperature[config.n_steps].coeffs())
            .norm() > 0.0);
}

TEST_CASE("measurement counting and exact sampling at zero sigma") {
  ModelConfig config = twin_config(4, 0.05, 20);
  SimulationOptions opts;
  SpectralField t0(4);
  t0.set_mode_pair(1, 0.5);
  t0.set_mode_pair(2, Complex(0.1, -0.2));
  opts.initial_temperature = t0;
  const TruthTrajectory truth =
      simulate_truth(config, unit_kappa, zero_source, 2, opts);
  const MeasurementSet set = synthesize_measurements(truth, config, 5, 9);
  REQUIRE(set.n_instants() == 4);
  CHECK(set.step_indices == std::vector<int>{5, 10, 15, 20});
  for (int i = 0; i < 4; ++i)
    for (int l = 0; l < 4; ++l)
      CHECK(set.values(l, i) ==
            doctest::Approx(truth.temperature[set.step_indices[i]].value_at(
                                config.sensor_locations[l]))
                .epsilon(1e-14));
  CHECK_THROWS_AS((void)synthesize_measurements(truth, config, 0, 1),
                  std::invalid_argument);
}

TEST_CASE("measurement noise has the configured variance") {
  ModelConfig config = twin_config(2, 0.05, 1);
  config.sensor_locations = {0.0};
  config.sensor_sigmas = {0.1};
  SimulationOptions opts;
  opts.initial_temperature = SpectralField::constant(2, 1.0);
  const TruthTrajectory truth =
      simulate_truth(config, unit_kappa, zero_source, 4, opts);
  const double exact = truth.temperature[1].value_at(0.0);
  const int reps = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int rep = 0; rep < reps; ++rep) {
    const MeasurementSet set =
        synthesize_measurements(truth, config, 1, 1000 + rep);
    const double err = set.values(0, 0) - exact;
    sum += err;
    sum2 += err * err;
  }
  const double var = sum2 / reps - (sum / reps) * (sum / reps);
  CHECK(var == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("instability aborts with the step index") {
  ModelConfig config = twin_config(8, 1.0, 50);
  SimulationOptions opts;
  SpectralField t0(8);
  t0.set_mode_pair(1, 0.5);
  opts.initial_temperature = t0;
  const SpaceTimeFn rough_kappa = [](double x, double) {
    return 2.0 + 1.95 * std::cos(x);
  };
  CHECK_THROWS_WITH_AS(
      (void)simulate_truth(config, rough_kappa, zero_source, 6, opts),
      doctest::Contains("instability"), std::runtime_error);
}

TEST_CASE("truth refinement subsamples a finer grid deterministically") {
  ModelConfig config = twin_config(4, 0.04, 10);
  config.alpha1 = 0.05;
  SimulationOptions coarse;
  SpectralField t0(4);
  t0.set_mode_pair(1, 0.5);
  coarse.initial_temperature = t0;
  SimulationOptions fine = coarse;
  fine.refine = 4;
  const TruthTrajectory a =
      simulate_truth(config, unit_kappa, zero_source, 11, coarse);
  const TruthTrajectory b =
      simulate_truth(config, unit_kappa, zero_source, 11, fine);
  REQUIRE(a.temperature.size() == b.temperature.size());
  CHECK(a.times(10) == doctest::Approx(b.times(10)));
  // Same model, different discretization: close but not identical.
  const double gap =
      (a.temperature[10].coeffs() - b.temperature[10].coeffs())
          .cwiseAbs()
          .maxCoeff();
  CHECK(gap > 0.0);
  CHECK(gap < 0.2);
}

TEST_CASE("steady state solve balances the source exactly") {
  ModelConfig config = twin_config(8, 0.01, 1);
  config.mu1 = 1e-3;
  SpectralField kappa(8);
  kappa.set_mode_pair(0, 1.2);
  kappa.set_mode_pair(1, Complex(0.15, 0.1));
  SpectralField source(8);
  source.set_mode_pair(1, 0.7);
  source.set_mode_pair(3, Complex(0.2, 0.4));
  const SpectralField steady = steady_state_temperature(config, kappa, source);
  SpectralField residual =
      collocation_product(kappa, steady.derivative()).derivative();
  for (int k = -8; k <= 8; ++k) {
    const double k2 = static_cast<double>(k) * k;
    residual.set_coeff(k, residual.coeff(k) -
                              config.mu1 * k2 * k2 * steady.coeff(k) +
                              source.coeff(k));
  }
  CHECK(residual.coeffs().cwiseAbs().maxCoeff() < 1e-10);
}
