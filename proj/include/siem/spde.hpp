#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/grid.hpp"
#include "siem/qwiener.hpp"

namespace siem {

constexpr double kDensityFloor = 1e-30;
constexpr double kNegativeMassLimit = 1e-8;

class CflViolation : public InvalidArgument {
 public:
  explicit CflViolation(double ratio)
      : InvalidArgument("CFL violation: stability ratio " + std::to_string(ratio) + " exceeds 1"), ratio_(ratio) {}
  double ratio() const noexcept { return ratio_; }

 private:
  double ratio_;
};

/// dt * (sum_axes max|h_a| / dx + d g^2 / dx^2). Explicit steps need <= 1.
inline double cfl_ratio(const GridGeometry& g, const VectorGridField& drift, double g_bar, double dt) {
  const double dx = g.spacing();
  double r = g.dim * g_bar * g_bar / (dx * dx);
  for (const auto& comp : drift) {
    double top = 0.0;
    for (double v : comp) top = std::max(top, std::abs(v));
    r += top / dx;
  }
  return dt * r;
}

namespace detail {

inline void check_shapes(const GridDensity& u, const VectorGridField& f, const char* what) {
  if (f.empty()) return;
  if (static_cast<int>(f.size()) != u.geometry.dim)
    throw InvalidArgument(std::string(what) + " needs one component per grid axis");
  for (const auto& c : f)
    if (c.size() != u.values.size()) throw InvalidArgument(std::string(what) + " does not match the grid size");
}

/// Adds -div(F) to `rate` for face fluxes F(i -> neighbour) given by `flux`.
template <class Flux>
void add_flux_divergence(const GridGeometry& g, Flux&& flux, GridField& rate, double coeff) {
  const double inv = coeff / g.spacing();
  for (int axis = 0; axis < g.dim; ++axis)
    for (std::size_t i = 0; i < rate.size(); ++i) {
      const std::size_t j = g.neighbor(i, axis, +1);
      const double F = flux(axis, i, j) * inv;
      rate[i] -= F;
      rate[j] += F;
    }
}

/// Conservative noise increment -coeff * div(u dW) with central face values.
inline GridField noise_term(const GridGeometry& g, const GridField& u, const VectorGridField& dW, double coeff) {
  GridField out(u.size(), 0.0);
  add_flux_divergence(
      g, [&](int a, std::size_t i, std::size_t j) { return 0.5 * (u[i] * dW[a][i] + u[j] * dW[a][j]); }, out, coeff);
  return out;
}

/// Stratonovich Heun step: predictor u + k1, corrector u + (k1 + k2) / 2 with
/// k = dt * rate(u) - coeff * div(u dW).
template <class Rate>
GridField heun(const GridGeometry& g, const GridField& u, Rate&& rate, const VectorGridField* dW, double noise_coeff,
               double dt) {
  auto increment = [&](const GridField& x) {
    GridField k = rate(x);
    for (double& v : k) v *= dt;
    if (dW) {
      const GridField n = noise_term(g, x, *dW, noise_coeff);
      for (std::size_t i = 0; i < k.size(); ++i) k[i] += n[i];
    }
    return k;
  };
  const GridField k1 = increment(u);
  GridField pred(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) pred[i] = u[i] + k1[i];
  const GridField k2 = increment(pred);
  GridField out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] + 0.5 * (k1[i] + k2[i]);
  return out;
}

/// Drops small negative undershoots, keeping the pre-step mass.
inline void enforce_positivity(GridField& u, double mass_before, double cell_volume) {
  double negative = 0.0;
  for (double v : u) {
    if (!std::isfinite(v)) throw NumericalError("density became non-finite");
    if (v < 0.0) negative -= v;
  }
  if (negative == 0.0) return;
  negative *= cell_volume;
  if (negative > kNegativeMassLimit * std::abs(mass_before))
    throw NumericalError("negative mass " + std::to_string(negative) + " exceeds limit");
  double kept = 0.0;
  for (double& v : u) {
    v = std::max(v, 0.0);
    kept += v;
  }
  const double scale = mass_before / (kept * cell_volume);
  for (double& v : u) v *= scale;
}

inline GridField fpe_rate(const GridGeometry& g, const GridField& u, const VectorGridField& drift, double g_bar) {
  GridField rate(u.size(), 0.0);
  const double diff = 0.5 * g_bar * g_bar / g.spacing();
  const bool has_drift = !drift.empty();
  add_flux_divergence(
      g,
      [&](int a, std::size_t i, std::size_t j) {
        const double adv = has_drift ? 0.5 * (u[i] * drift[a][i] + u[j] * drift[a][j]) : 0.0;
        return adv - diff * (u[j] - u[i]);
      },
      rate, 1.0);
  return rate;
}

inline GridDensity advance(const GridDensity& u, GridField values) {
  GridDensity out{u.geometry, std::move(values), u.time_index + 1};
  enforce_positivity(out.values, u.mass(), u.geometry.cell_volume());
  return out;
}

}  // namespace detail

/// One Heun step of du/dt = -div(u h) + (g^2 / 2) lap(u) with central
/// finite-volume fluxes. `drift` holds one cell-centred field per axis, or is
/// empty for zero drift.
inline GridDensity fpe_step(const GridDensity& u, const VectorGridField& drift, double g_bar, double dt) {
  detail::check_shapes(u, drift, "drift");
  if (const double r = cfl_ratio(u.geometry, drift, g_bar, dt); r > 1.0) throw CflViolation(r);
  auto rate = [&](const GridField& x) { return detail::fpe_rate(u.geometry, x, drift, g_bar); };
  return detail::advance(u, detail::heun(u.geometry, u.values, rate, nullptr, 0.0, dt));
}

/// As fpe_step plus the conservative Stratonovich noise -g^2 div(u o dW).
/// `dW` is the increment over this step, one field per axis.
inline GridDensity spde_step(const GridDensity& u, const VectorGridField& drift, double g_bar,
                             const VectorGridField& dW, double dt) {
  detail::check_shapes(u, drift, "drift");
  detail::check_shapes(u, dW, "noise increment");
  if (dW.empty()) throw InvalidArgument("spde_step needs a noise increment");
  if (const double r = cfl_ratio(u.geometry, drift, g_bar, dt); r > 1.0) throw CflViolation(r);
  auto rate = [&](const GridField& x) { return detail::fpe_rate(u.geometry, x, drift, g_bar); };
  return detail::advance(u, detail::heun(u.geometry, u.values, rate, &dW, g_bar * g_bar, dt));
}

/// Exact expectation over the noise of one spde_step with increments drawn
/// from `noise`. The Heun map is quadratic in the Gaussian coefficients, so
/// E[step(u)] = step_0(u) + sum_j (step_{+e_j}(u) + step_{-e_j}(u) - 2 step_0(u)) / 2,
/// where step_{+-e_j} uses a unit coefficient on mode j alone.
inline GridDensity expected_spde_step(const GridDensity& u, const VectorGridField& drift, double g_bar,
                                      const QWienerNoise& noise, double dt) {
  std::vector<double> c(noise.modes_per_component() * noise.spec().components, 0.0);
  const GridDensity base = spde_step(u, drift, g_bar, noise.increment(dt, c), dt);
  GridDensity out = base;
  for (std::size_t j = 0; j < c.size(); ++j)
    for (double sign : {1.0, -1.0}) {
      c.assign(c.size(), 0.0);
      c[j] = sign;
      const GridDensity r = spde_step(u, drift, g_bar, noise.increment(dt, c), dt);
      for (std::size_t i = 0; i < r.values.size(); ++i) out.values[i] += 0.5 * (r.values[i] - base.values[i]);
    }
  return out;
}

inline GridField relative_potential(const GridDensity& u, const GridDensity& v) {
  GridField psi(u.values.size());
  for (std::size_t i = 0; i < psi.size(); ++i)
    psi[i] = std::log(std::max(u.values[i], kDensityFloor)) - std::log(std::max(v.values[i], kDensityFloor));
  return psi;
}

/// Stability ratio of the gradient-flow drift for target v; must not exceed 1.
inline double gradient_flow_cfl_ratio(const GridDensity& v, double dt) {
  const GridGeometry& g = v.geometry;
  const double dx = g.spacing();
  auto floor = [&](std::size_t i) { return std::max(v.values[i], kDensityFloor); };
  double worst = 0.0;
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    double s = 0.0;
    for (int a = 0; a < g.dim; ++a)
      for (int dir : {-1, +1}) s += std::sqrt(floor(g.neighbor(i, a, dir)) / floor(i));
    worst = std::max(worst, s);
  }
  return dt * worst / (dx * dx);
}

/// Gradient-flow form du = div(u grad log(u/v)) dt - div(u o dW). The drift
/// uses the face flux -sqrt(v_i v_j) (u_j/v_j - u_i/v_i) / dx, which is linear
/// in u and keeps u == v as an exact fixed point. Pass dW == nullptr for the
/// noise-free flow.
inline GridDensity gradient_flow_step(const GridDensity& u, const GridDensity& v, const VectorGridField* dW, double dt) {
  if (v.values.size() != u.values.size()) throw InvalidArgument("gradient_flow_step: grid mismatch");
  if (dW) detail::check_shapes(u, *dW, "noise increment");
  const GridGeometry& g = u.geometry;
  const double dx = g.spacing();
  GridField vf(v.values.size());
  for (std::size_t i = 0; i < vf.size(); ++i) vf[i] = std::max(v.values[i], kDensityFloor);
  if (const double r = gradient_flow_cfl_ratio(v, dt); r > 1.0) throw CflViolation(r);
  auto rate = [&](const GridField& x) {
    GridField r(x.size(), 0.0);
    detail::add_flux_divergence(
        g,
        [&](int, std::size_t i, std::size_t j) {
          return -std::sqrt(vf[i] * vf[j]) * (x[j] / vf[j] - x[i] / vf[i]) / dx;
        },
        r, 1.0);
    return r;
  };
  return detail::advance(u, detail::heun(g, u.values, rate, dW, 1.0, dt));
}

/// KL(u || v) = sum u log(u / v) h^d with 0 log 0 = 0 and v floored.
inline double kl_energy(const GridDensity& u, const GridDensity& v) {
  if (v.values.size() != u.values.size()) throw InvalidArgument("kl_energy: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    const double p = u.values[i];
    if (p <= 0.0) continue;
    s += p * (std::log(p) - std::log(std::max(v.values[i], kDensityFloor)));
  }
  return s * u.geometry.cell_volume();
}

/// sum u |grad_h log(u / v)|^2 h^d with central differences.
inline double dissipation(const GridDensity& u, const GridDensity& v) {
  if (v.values.size() != u.values.size()) throw InvalidArgument("dissipation: grid mismatch");
  const GridGeometry& g = u.geometry;
  const GridField psi = relative_potential(u, v);
  const double inv = 1.0 / (2.0 * g.spacing());
  double s = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (u.values[i] <= 0.0) continue;
    double grad2 = 0.0;
    for (int a = 0; a < g.dim; ++a) {
      const double d = (psi[g.neighbor(i, a, +1)] - psi[g.neighbor(i, a, -1)]) * inv;
      grad2 += d * d;
    }
    s += u.values[i] * grad2;
  }
  return s * g.cell_volume();
}

/// Realized noise power over one step: the discrete pairing of grad psi with
/// the noise flux u dW, both at the Stratonovich midpoint, per unit time.
inline double noise_power(const GridDensity& before, const GridDensity& after, const GridDensity& v,
                          const VectorGridField& dW, double dt) {
  const GridGeometry& g = before.geometry;
  GridDensity mid{g, GridField(before.values.size()), before.time_index};
  for (std::size_t i = 0; i < mid.values.size(); ++i) mid.values[i] = 0.5 * (before.values[i] + after.values[i]);
  const GridField psi = relative_potential(mid, v);
  const double dx = g.spacing();
  double s = 0.0;
  for (int a = 0; a < g.dim; ++a)
    for (std::size_t i = 0; i < psi.size(); ++i) {
      const std::size_t j = g.neighbor(i, a, +1);
      const double flux = 0.5 * (mid.values[i] * dW[a][i] + mid.values[j] * dW[a][j]);
      s += flux * (psi[j] - psi[i]) / dx;
    }
  return s * g.cell_volume() / dt;
}

struct EnergyRecord {
  std::size_t step;
  double time;
  double energy;
  double dissipation;
  double noise_power;
  double bound_rhs;
};

struct EnergyTrace {
  std::uint64_t seed = 0;
  std::vector<EnergyRecord> records;
  double final_energy = 0.0;
  double lambda_hat = 0.0;      // min D / (2E) over steps with E above the floor
  double eta_hat = 0.0;         // noise-power quantile
  std::size_t bound_satisfied = 0;  // steps with dE/dt <= -2 lambda E + eta
  double bound_fraction = 0.0;      // bound_satisfied / steps
  double plateau_energy = 0.0;  // mean E over the final quarter
  double plateau_bound = 0.0;   // eta / (2 lambda)
};

struct EnergyExperimentConfig {
  GridGeometry geometry;
  GridDensity initial;
  /// Target frozen over each step (quasi-static windows of one step).
  std::function<GridDensity(std::size_t step)> target;
  SpectralNoiseSpec noise;
  bool noise_enabled = true;
  double dt = 1e-3;
  std::size_t steps = 1000;
  double energy_floor = 1e-10;
  double noise_quantile = 0.95;
};

namespace detail {

inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

}  // namespace detail

/// Integrates the gradient-flow SPDE for one noise seed and fits the decay
/// rate and noise bound of dE/dt <= -2 lambda E + eta.
inline EnergyTrace run_energy_trajectory(const EnergyExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.target) throw InvalidArgument("energy experiment needs a target trajectory");
  if (cfg.steps < 1) throw InvalidArgument("energy experiment needs at least one step");
  const QWienerNoise noise(cfg.noise, cfg.geometry);
  if (cfg.noise_enabled && cfg.noise.components != cfg.geometry.dim)
    throw InvalidArgument("energy experiment noise needs one component per axis");

  EnergyTrace trace;
  trace.seed = seed;
  GridDensity u = cfg.initial;
  std::vector<double> energies;
  energies.reserve(cfg.steps + 1);
  for (std::size_t n = 0; n < cfg.steps; ++n) {
    const GridDensity v = cfg.target(n);
    const double E = kl_energy(u, v);
    const double D = dissipation(u, v);
    GridDensity next;
    double P = 0.0;
    if (cfg.noise_enabled) {
      const auto dW = noise.sample_increment(cfg.dt, seed, n);
      next = gradient_flow_step(u, v, &dW, cfg.dt);
      P = noise_power(u, next, v, dW, cfg.dt);
    } else {
      next = gradient_flow_step(u, v, nullptr, cfg.dt);
    }
    trace.records.push_back({n, static_cast<double>(n) * cfg.dt, E, D, P, 0.0});
    energies.push_back(E);
    u = std::move(next);
  }
  trace.final_energy = kl_energy(u, cfg.target(cfg.steps));
  energies.push_back(trace.final_energy);

  double lambda = std::numeric_limits<double>::infinity();
  std::vector<double> powers;
  for (const auto& r : trace.records) {
    if (r.energy > cfg.energy_floor) lambda = std::min(lambda, r.dissipation / (2.0 * r.energy));
    powers.push_back(r.noise_power);
  }
  trace.lambda_hat = std::isfinite(lambda) ? lambda : 0.0;
  trace.eta_hat = detail::quantile(powers, cfg.noise_quantile);

  std::size_t satisfied = 0;
  for (std::size_t n = 0; n < trace.records.size(); ++n) {
    auto& r = trace.records[n];
    r.bound_rhs = -2.0 * trace.lambda_hat * r.energy + trace.eta_hat;
    if ((energies[n + 1] - energies[n]) / cfg.dt <= r.bound_rhs) ++satisfied;
  }
  trace.bound_satisfied = satisfied;
  trace.bound_fraction = static_cast<double>(satisfied) / static_cast<double>(trace.records.size());

  const std::size_t start = trace.records.size() - std::max<std::size_t>(1, trace.records.size() / 4);
  double plateau = 0.0;
  for (std::size_t n = start; n < trace.records.size(); ++n) plateau += trace.records[n].energy;
  trace.plateau_energy = plateau / static_cast<double>(trace.records.size() - start);
  trace.plateau_bound = trace.lambda_hat > 0.0 ? trace.eta_hat / (2.0 * trace.lambda_hat)
                                               : std::numeric_limits<double>::infinity();
  return trace;
}

inline std::vector<EnergyTrace> run_energy_experiment(const EnergyExperimentConfig& cfg,
                                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<EnergyTrace> out;
  out.reserve(seeds.size());
  for (auto seed : seeds) out.push_back(run_energy_trajectory(cfg, seed));
  return out;
}

}  // namespace siem
