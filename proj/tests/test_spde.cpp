#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "siem/spde.hpp"

using namespace siem;

namespace {

double moment(const GridDensity& u, int power, double center = 0.0) {
  return project(u, [&](double x, double) { return std::pow(x - center, power); });
}

double variance(const GridDensity& u) {
  const double m = moment(u, 1);
  return moment(u, 2, m);
}

GridDensity random_density(const GridGeometry& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  GridDensity u{g, GridField(g.size()), 0};
  for (double& v : u.values) v = ud(rng);
  const double m = u.mass();
  for (double& v : u.values) v /= m;
  return u;
}

double cosine_observable(const GridDensity& u) {
  return project(u, [](double x, double) { return std::cos(x); });
}

}  // namespace

TEST(FpeStep, NoDynamicsLeavesDensity) {
  const GridGeometry g{1, 128, 8.0};
  const auto u = gaussian_density(g, {0.5, 0}, 1.0);
  const auto next = fpe_step(u, {}, 0.0, 1e-3);
  EXPECT_EQ(next.values, u.values);
  EXPECT_EQ(next.time_index, u.time_index + 1);
}

TEST(FpeStep, HeatCalibrationRateIsTwo) {
  const GridGeometry g{1, 256, 8.0};
  auto u = gaussian_density(g, {0.0, 0}, 1.0);
  const double dt = 1e-3, v0 = variance(u);
  for (int n = 0; n < 500; ++n) u = fpe_step(u, {}, std::sqrt(2.0), dt);
  const double rate = (variance(u) - v0) / (500 * dt);
  EXPECT_NEAR(rate, 2.0, 0.02);
}

TEST(FpeStep, MatchesSpectralHeatSemigroup) {
  const GridGeometry g{1, 64, 8.0};
  const int n = g.cells;
  auto u = gaussian_density(g, {0.7, 0}, 0.8);
  const GridField u0 = u.values;
  const double dt = 1e-4, g_bar = 1.0;
  const int steps = 1000;
  for (int s = 0; s < steps; ++s) u = fpe_step(u, {}, g_bar, dt);
  // Fourier multiplier exp(t (g^2/2) sigma_k) with sigma_k the discrete Laplacian symbol.
  const double dx = g.spacing(), T = steps * dt;
  std::vector<std::complex<double>> hat(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i) hat[k] += u0[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
  for (int i = 0; i < n; ++i) {
    std::complex<double> v = 0.0;
    for (int k = 0; k < n; ++k) {
      const double s = std::sin(std::numbers::pi * k / n);
      const double symbol = -4.0 * s * s / (dx * dx);
      v += hat[k] * std::exp(T * 0.5 * g_bar * g_bar * symbol) * std::polar(1.0, 2.0 * std::numbers::pi * k * i / n);
    }
    EXPECT_NEAR(u.values[i], v.real() / n, 1e-6) << "cell " << i;
  }
}

TEST(FpeStep, DivergenceFreeDriftKeepsUniform) {
  const GridGeometry g{2, 32, 4.0};
  auto u = GridDensity::from_function(g, [](double, double) { return 1.0; });
  const double level = u.values[0];
  VectorGridField h(2, GridField(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto p = g.point(i);
    h[0][i] = std::sin(p[1]);
    h[1][i] = std::cos(p[0]);
  }
  for (int s = 0; s < 100; ++s) u = fpe_step(u, h, 0.3, 1e-3);
  for (double v : u.values) EXPECT_NEAR(v, level, 1e-10);
}

TEST(FpeStep, RejectsUnstableStep) {
  const GridGeometry g{1, 256, 8.0};
  const auto u = gaussian_density(g, {0.0, 0}, 1.0);
  EXPECT_THROW(fpe_step(u, {}, std::sqrt(2.0), 0.1), CflViolation);
  try {
    fpe_step(u, {}, std::sqrt(2.0), 0.1);
  } catch (const CflViolation& e) {
    EXPECT_NEAR(e.ratio(), cfl_ratio(g, {}, std::sqrt(2.0), 0.1), 1e-12);
  }
  EXPECT_THROW(fpe_step(u, VectorGridField(2, GridField(g.size())), 1.0, 1e-3), InvalidArgument);
}

TEST(SpdeStep, ZeroNoiseEqualsFpeStep) {
  const GridGeometry g{1, 128, 8.0};
  const auto u = gaussian_density(g, {0.5, 0}, 1.0);
  VectorGridField drift(1, GridField(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) drift[0][i] = -0.5 * g.point(i)[0];
  const VectorGridField zero(1, GridField(g.size(), 0.0));
  EXPECT_EQ(spde_step(u, drift, 0.4, zero, 1e-3).values, fpe_step(u, drift, 0.4, 1e-3).values);
}

TEST(SpdeStep, ConservesMassEveryStep) {
  for (int dim : {1, 2}) {
    const GridGeometry g{dim, dim == 1 ? 256 : 64, 8.0};
    const QWienerNoise q(SpectralNoiseSpec::defaults(dim), g);
    auto u = gaussian_density(g, {1.0, -0.5}, 1.0);
    VectorGridField drift(dim, GridField(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i)
      for (int a = 0; a < dim; ++a) drift[a][i] = -0.5 * g.point(i)[a];
    for (int s = 0; s < 50; ++s) {
      const double before = u.mass();
      u = spde_step(u, drift, 0.3, q.sample_increment(1e-3, 2, s), 1e-3);
      EXPECT_NEAR(u.mass(), before, 1e-12 * before) << "dim " << dim << " step " << s;
    }
  }
}

TEST(SpdeStep, WeakOrderOneByRichardson) {
  const GridGeometry g{1, 64, 8.0};
  const QWienerNoise q(SpectralNoiseSpec{4, 1.5, 1.0, 1}, g);
  const double T = 0.4, dt0 = 0.02;
  std::vector<double> mean;
  for (int level = 0; level < 3; ++level) {
    const double dt = dt0 / (1 << level);
    auto u = gaussian_density(g, {0.3, 0}, 0.5);
    for (long s = 0; s < std::lround(T / dt); ++s) u = expected_spde_step(u, {}, 1.0, q, dt);
    mean.push_back(cosine_observable(u));
  }
  const double ratio = (mean[0] - mean[1]) / (mean[1] - mean[2]);
  EXPECT_GE(ratio, 1.5);
  EXPECT_LE(ratio, 2.5);
}

TEST(SpdeStep, MonteCarloMeanMatchesExactExpectation) {
  const GridGeometry g{1, 64, 8.0};
  const QWienerNoise q(SpectralNoiseSpec{4, 1.5, 1.0, 1}, g);
  const double T = 0.4, dt = 0.02;
  const long steps = std::lround(T / dt);
  auto expected = gaussian_density(g, {0.3, 0}, 0.5);
  for (long s = 0; s < steps; ++s) expected = expected_spde_step(expected, {}, 1.0, q, dt);
  const int paths = 200;
  double sum = 0.0, sum2 = 0.0;
  for (int p = 0; p < paths; ++p) {
    auto u = gaussian_density(g, {0.3, 0}, 0.5);
    for (long s = 0; s < steps; ++s) u = spde_step(u, {}, 1.0, q.sample_increment(dt, 100 + p, s), dt);
    const double x = cosine_observable(u);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / paths;
  const double se = std::sqrt((sum2 / paths - mean * mean) / (paths - 1));
  EXPECT_LE(std::abs(mean - cosine_observable(expected)), 3.0 * se);
}

TEST(SpdeStep, StratonovichQuadraticVariation) {
  const GridGeometry g{1, 128, 8.0};
  const auto spec = SpectralNoiseSpec::defaults(1);
  const QWienerNoise q(spec, g);
  const double dt = 1e-4, g_bar = 1.0, L = g.half_width;
  const int steps = 2000;
  auto phi = [](double x) { return std::cos(std::numbers::pi * x / 4.0); };
  auto dphi = [](double x) { return -std::numbers::pi / 4.0 * std::sin(std::numbers::pi * x / 4.0); };
  auto basis = [&](int j, double x) {
    if (j == 0) return 1.0 / std::sqrt(2.0 * L);
    const int w = (j + 1) / 2;
    const double arg = w * std::numbers::pi * (x + L) / L;
    return (j % 2 ? std::cos(arg) : std::sin(arg)) / std::sqrt(L);
  };
  auto u = gaussian_density(g, {0.5, 0}, 1.0);
  double qv = 0.0, ito = 0.0;
  double X = project(u, [&](double x, double) { return phi(x); });
  for (int s = 0; s < steps; ++s) {
    // Ito increment variance g^4 dt sum_j lambda_j <u, e_j phi'>^2.
    for (int j = 0; j < 2 * spec.modes + 1; ++j) {
      const double w = (j + 1) / 2;
      const double lambda = spec.overall_scale * std::pow(1.0 + w * w, -spec.eigen_decay);
      const double c = project(u, [&](double x, double) { return basis(j, x) * dphi(x); });
      ito += std::pow(g_bar, 4) * dt * lambda * c * c;
    }
    u = spde_step(u, {}, g_bar, q.sample_increment(dt, 9, s), dt);
    const double next = project(u, [&](double x, double) { return phi(x); });
    qv += (next - X) * (next - X);
    X = next;
  }
  EXPECT_NEAR(qv / ito, 1.0, 0.10);
}

TEST(SpdeStep, ExcessiveNoiseAbortsOnNegativeMass) {
  const GridGeometry g{1, 128, 8.0};
  SpectralNoiseSpec spec = SpectralNoiseSpec::defaults(1);
  spec.overall_scale = 1e6;
  const QWienerNoise q(spec, g);
  const auto u = gaussian_density(g, {0.0, 0}, 0.2);
  EXPECT_THROW(spde_step(u, {}, 1.0, q.sample_increment(1e-3, 1, 0), 1e-3), NumericalError);
}

TEST(KlEnergy, ZeroForIdenticalDensities) {
  const GridGeometry g{1, 256, 8.0};
  const auto u = gaussian_density(g, {0.2, 0}, 1.3);
  EXPECT_EQ(kl_energy(u, u), 0.0);
  EXPECT_EQ(dissipation(u, u), 0.0);
}

TEST(KlEnergy, ShiftedGaussians) {
  const GridGeometry g{1, 512, 8.0};
  const double m = 1.0;
  const auto u = gaussian_density(g, {m, 0}, 1.0);
  const auto v = gaussian_density(g, {0.0, 0}, 1.0);
  EXPECT_NEAR(kl_energy(u, v), m * m / 2, 0.02 * m * m / 2);
  EXPECT_NEAR(dissipation(u, v), m * m, 0.03 * m * m);
}

TEST(KlEnergy, GibbsInequalityOnRandomPairs) {
  const GridGeometry g{1, 64, 8.0};
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i) {
    const auto u = random_density(g, rng), v = random_density(g, rng);
    EXPECT_GE(kl_energy(u, v), 0.0);
    EXPECT_GE(dissipation(u, v), 0.0);
  }
}

TEST(GradientFlow, TargetIsFixedPoint) {
  const GridGeometry g{1, 256, 8.0};
  const auto v = gaussian_density(g, {0.0, 0}, 1.0);
  auto u = v;
  for (int s = 0; s < 100; ++s) u = gradient_flow_step(u, v, nullptr, 1e-3);
  for (std::size_t i = 0; i < u.values.size(); ++i) EXPECT_NEAR(u.values[i], v.values[i], 1e-14);
  EXPECT_THROW(gradient_flow_step(u, v, nullptr, 1.0), CflViolation);
}

TEST(GradientFlow, ConservesMassWithNoise) {
  const GridGeometry g{2, 32, 8.0};
  const QWienerNoise q(SpectralNoiseSpec::defaults(2), g);
  const auto v = gaussian_density(g, {0.0, 0.0}, 1.0);
  auto u = gaussian_density(g, {1.0, 0.5}, 1.5);
  for (int s = 0; s < 50; ++s) {
    const double before = u.mass();
    const auto dW = q.sample_increment(1e-3, 3, s);
    u = gradient_flow_step(u, v, &dW, 1e-3);
    EXPECT_NEAR(u.mass(), before, 1e-12 * before);
  }
}

namespace {

EnergyExperimentConfig energy_setup(double target_var, bool noise) {
  EnergyExperimentConfig c;
  c.geometry = GridGeometry{1, 256, 8.0};
  c.initial = gaussian_density(c.geometry, {1.0, 0}, 1.0);
  const auto v = gaussian_density(c.geometry, {0.0, 0}, target_var);
  c.target = [v](std::size_t) { return v; };
  c.noise = SpectralNoiseSpec::defaults(1);
  c.noise_enabled = noise;
  c.dt = 1e-3;
  c.steps = 3000;
  return c;
}

}  // namespace

TEST(EnergyExperiment, EquilibriumStaysAtZero) {
  auto c = energy_setup(1.0, false);
  c.initial = c.target(0);
  const auto tr = run_energy_trajectory(c, 1);
  for (const auto& r : tr.records) EXPECT_LE(r.energy, 1e-8);
}

TEST(EnergyExperiment, NoiseFreeDecayMatchesLsiConstant) {
  for (double var : {1.0, 2.0}) {
    const auto c = energy_setup(var, false);
    const auto tr = run_energy_trajectory(c, 1);
    EXPECT_NEAR(tr.lambda_hat, 1.0 / var, 0.3 / var) << "variance " << var;
    std::vector<double> logs;
    for (const auto& r : tr.records) logs.push_back(std::log(r.energy));
    for (std::size_t n = 0; n + 1 < logs.size(); ++n) {
      ASSERT_LE(tr.records[n + 1].energy, tr.records[n].energy);
      EXPECT_LE((logs[n + 1] - logs[n]) / c.dt, -2.0 * tr.lambda_hat * (1.0 - 1e-2)) << "step " << n;
    }
    // Concave or linear: slopes do not increase beyond rounding.
    for (std::size_t n = 0; n + 2 < logs.size(); ++n)
      EXPECT_LE(logs[n + 2] - 2 * logs[n + 1] + logs[n], 1e-6) << "step " << n;
  }
}

TEST(EnergyExperiment, NoisyPlateauUnderBound) {
  const auto c = energy_setup(1.0, true);
  const auto traces = run_energy_experiment(c, {1, 2, 3});
  for (const auto& tr : traces) {
    EXPECT_GT(tr.eta_hat, 0.0);
    EXPECT_LE(tr.plateau_energy, 1.5 * tr.plateau_bound) << "seed " << tr.seed;
    EXPECT_GE(tr.bound_satisfied * 100, 95 * tr.records.size()) << "seed " << tr.seed;
    for (const auto& r : tr.records) EXPECT_DOUBLE_EQ(r.bound_rhs, -2.0 * tr.lambda_hat * r.energy + tr.eta_hat);
  }
}

TEST(EnergyExperiment, RejectsMissingTarget) {
  auto c = energy_setup(1.0, false);
  c.target = nullptr;
  EXPECT_THROW(run_energy_trajectory(c, 1), InvalidArgument);
}
