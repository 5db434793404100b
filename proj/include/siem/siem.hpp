#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/gaussian_mixture.hpp"
#include "siem/lorentz.hpp"
#include "siem/ratio.hpp"
#include "siem/rng.hpp"
#include "siem/schedule.hpp"
#include "siem/score_model.hpp"
#include "siem/types.hpp"

namespace siem {

struct XiEstimate {
  double value = 0.0;
  double se = 0.0;
  std::size_t samples = 0;
};

enum class XiEstimator { marginal, dsm };

inline XiEstimator parse_xi_estimator(const std::string& s) {
  if (s == "marginal") return XiEstimator::marginal;
  if (s == "dsm") return XiEstimator::dsm;
  throw InvalidArgument("unknown xi estimator '" + s + "' (expected marginal or dsm)");
}

inline std::string to_string(XiEstimator e) { return e == XiEstimator::marginal ? "marginal" : "dsm"; }

namespace detail {

inline XiEstimate mean_and_se(const Vector& v) {
  XiEstimate e;
  e.samples = static_cast<std::size_t>(v.size());
  e.value = v.mean();
  if (v.size() > 1) {
    const double var = (v.array() - e.value).square().sum() / static_cast<double>(v.size() - 1);
    e.se = std::sqrt(var / static_cast<double>(v.size()));
  }
  return e;
}

inline Vector ratio_weights(const RatioModel* ratio, std::size_t t, const Matrix& x) {
  if (!ratio) return Vector::Ones(x.rows());
  if (ratio->reverse_step() != t)
    throw InvalidArgument("ratio model trained for step " + std::to_string(ratio->reverse_step()) +
                          " used at step " + std::to_string(t));
  return ratio->estimate(x);
}

/// d g^2 r (delta . x / (eps + |x|^2)) per row.
inline Vector projected(const Matrix& delta, const Matrix& x, const Vector& r, double g2, const LorentzParams& p) {
  if (!delta.allFinite()) throw NumericalError("non-finite score in xi estimate");
  const Eigen::ArrayXd proj = (delta.array() * x.array()).rowwise().sum();
  const Eigen::ArrayXd denom = p.epsilon + x.array().square().rowwise().sum();
  return (p.d * g2 * r.array() * proj / denom).matrix();
}

}  // namespace detail

/// Points drawn exactly from the diffused target at reverse step t.
inline Matrix draw_marginal(const GaussianMixture& target, const NoiseSchedule& s, std::size_t t, std::size_t n,
                            std::uint64_t seed) {
  const auto c = transition_coeffs(s, s.forward_index(t));
  const GaussianMixture vt = target.diffuse(c.a, c.b);
  Matrix x(static_cast<Eigen::Index>(n), vt.dim());
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = CounterRng::stream(seed, Stream::xi_marginal, t, i);
    vt.sample_into(rng, x.row(static_cast<Eigen::Index>(i)).data());
  }
  return x;
}

/// xi(t) = d E_{x ~ v_t}[g^2 (u/v)(s - grad log v_t) . x/(eps + |x|^2)].
/// A null ratio is the unit ratio.
inline XiEstimate xi_marginal(const ScoreModel& model, const GaussianMixture& target, const RatioModel* ratio,
                              const NoiseSchedule& s, std::size_t t, std::size_t n, std::uint64_t seed,
                              const LorentzParams& p) {
  p.validate();
  if (n < 2) throw InvalidArgument("xi_marginal: need n >= 2");
  if (model.dim() != target.dim() || p.d != target.dim())
    throw InvalidArgument("xi_marginal: dimensions of model, target and test function differ");
  const auto c = transition_coeffs(s, s.forward_index(t));
  const GaussianMixture vt = target.diffuse(c.a, c.b);
  const Matrix x = draw_marginal(target, s, t, n, seed);
  const Matrix delta = model.evaluate(t, x) - vt.score(x);
  const double g = reverse_coeffs(s, t).g_bar;
  return detail::mean_and_se(detail::projected(delta, x, detail::ratio_weights(ratio, t, x), g * g, p));
}

/// Per-sample DSM integrand d g^2 r (s(x_t) + z/b) . x_t/(eps + |x_t|^2).
inline Vector xi_dsm_integrand(const Matrix& model_score, const Matrix& x_t, const Matrix& z, double b, double g2,
                               const Vector& r, const LorentzParams& p) {
  if (!(b > 0.0)) throw InvalidArgument("xi_dsm: b = 0 at this step");
  return detail::projected(model_score + z / b, x_t, r, g2, p);
}

/// Conditional-score form: x0 resampled from `data`, x_t = a x0 + b z.
inline XiEstimate xi_dsm(const ScoreModel& model, const Matrix& data, const RatioModel* ratio, const NoiseSchedule& s,
                         std::size_t t, std::size_t n, std::uint64_t seed, const LorentzParams& p) {
  p.validate();
  if (n < 2) throw InvalidArgument("xi_dsm: need n >= 2");
  if (data.rows() < 1) throw InvalidArgument("xi_dsm: empty data set");
  if (model.dim() != data.cols() || p.d != data.cols())
    throw InvalidArgument("xi_dsm: dimensions of model, data and test function differ");
  const auto c = transition_coeffs(s, s.forward_index(t));
  if (!(c.b > 0.0)) throw InvalidArgument("xi_dsm: b = 0 at reverse step " + std::to_string(t));
  const Eigen::Index d = data.cols();
  Matrix x(static_cast<Eigen::Index>(n), d), z(static_cast<Eigen::Index>(n), d);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = CounterRng::stream(seed, Stream::xi_dsm, t, i);
    const auto row = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows())));
    for (Eigen::Index j = 0; j < d; ++j) z(static_cast<Eigen::Index>(i), j) = rng.normal();
    x.row(static_cast<Eigen::Index>(i)) = c.a * data.row(row) + c.b * z.row(static_cast<Eigen::Index>(i));
  }
  const double g = reverse_coeffs(s, t).g_bar;
  return detail::mean_and_se(
      xi_dsm_integrand(model.evaluate(t, x), x, z, c.b, g * g, detail::ratio_weights(ratio, t, x), p));
}

/// Gaussian filter along the series with half-sample reflection at both ends.
/// The kernel is truncated at radius int(4 sigma + 0.5).
inline std::vector<double> smooth_bias(const std::vector<double>& series, double sigma) {
  if (series.empty()) throw InvalidArgument("smooth_bias: empty series");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("smooth_bias: sigma must be > 0");
  const auto radius = static_cast<std::ptrdiff_t>(4.0 * sigma + 0.5);
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;
  const auto n = static_cast<std::ptrdiff_t>(series.size());
  auto at = [&](std::ptrdiff_t i) {
    std::ptrdiff_t m = i % (2 * n);
    if (m < 0) m += 2 * n;
    return series[static_cast<std::size_t>(m < n ? m : 2 * n - 1 - m)];
  };
  std::vector<double> out(series.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t j = -radius; j <= radius; ++j) acc += kernel[static_cast<std::size_t>(j + radius)] * at(i + j);
    out[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

/// Closed range of reverse-step indices.
struct Window {
  std::string name;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - start + 1; }
};

/// All K steps, and the first `fraction` of reverse steps (at least one).
inline Window full_window(std::size_t K) { return {"full", 0, K - 1}; }
inline Window leading_window(std::size_t K, double fraction, std::string name = "first_10pct") {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("window fraction must be in (0, 1]");
  const auto w = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(K))));
  return {std::move(name), 0, std::min(w, K) - 1};
}

/// sqrt(sum over the window of (xi - mu)^2 dt). Indices are positions in the series.
inline double siem_score(const std::vector<double>& xi, const std::vector<double>& mu, double dt, const Window& w) {
  if (xi.size() != mu.size()) throw InvalidArgument("siem_score: xi and mu differ in length");
  if (w.start > w.end || w.end >= xi.size())
    throw InvalidArgument("siem_score: window [" + std::to_string(w.start) + ", " + std::to_string(w.end) +
                          "] outside series of length " + std::to_string(xi.size()));
  if (!(dt > 0.0)) throw InvalidArgument("siem_score: dt must be > 0");
  double acc = 0.0;
  for (std::size_t i = w.start; i <= w.end; ++i) acc += (xi[i] - mu[i]) * (xi[i] - mu[i]);
  return std::sqrt(acc * dt);
}

struct SiemConfig {
  XiEstimator estimator = XiEstimator::marginal;
  std::size_t samples = 4096;
  std::optional<double> epsilon;  // defaults to d
  double smoothing_sigma = 10.0;
  double truncation_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct WindowValue {
  Window window;
  double siem = 0.0;
};

struct SiemReport {
  std::vector<std::size_t> steps;  // reverse indices evaluated, in order
  std::vector<double> xi;
  std::vector<double> se;
  std::vector<double> mu_phi;
  std::vector<WindowValue> windows;
  double dt = 0.0;
  XiEstimator estimator = XiEstimator::marginal;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  double value(const std::string& name) const {
    for (const auto& w : windows)
      if (w.window.name == name) return w.siem;
    throw InvalidArgument("SiemReport has no window named '" + name + "'");
  }
};

/// Inputs for a SIEM run. The marginal estimator needs the target; the DSM
/// estimator needs data. Ratios are per reverse step; missing steps use 1.
struct SiemInputs {
  const ScoreModel* model = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const GaussianMixture* target = nullptr;
  const Matrix* data = nullptr;
  const std::map<std::size_t, RatioModel>* ratios = nullptr;
};

/// xi over every reverse step, the smoothed bias, and SIEM for the full and
/// leading windows. Each window's bias is smoothed from that window's xi alone,
/// so a truncated evaluation needs no steps outside it.
inline SiemReport compute_siem(const SiemInputs& in, const SiemConfig& cfg, std::vector<Window> windows = {}) {
  if (!in.model || !in.schedule) throw InvalidArgument("compute_siem: model and schedule are required");
  const NoiseSchedule& s = *in.schedule;
  const std::size_t K = s.steps();
  if (windows.empty()) windows = {full_window(K), leading_window(K, cfg.truncation_fraction)};
  const int d = static_cast<int>(in.model->dim());
  const LorentzParams p{cfg.epsilon.value_or(static_cast<double>(d)), d};

  std::size_t last = 0;
  for (const auto& w : windows) {
    if (w.start > w.end || w.end >= K) throw InvalidArgument("compute_siem: window '" + w.name + "' out of range");
    last = std::max(last, w.end);
  }
  SiemReport r;
  r.dt = s.dt();
  r.estimator = cfg.estimator;
  r.samples = cfg.samples;
  r.seed = cfg.seed;
  for (std::size_t t = 0; t <= last; ++t) {
    const RatioModel* ratio = nullptr;
    if (in.ratios) {
      const auto it = in.ratios->find(t);
      if (it != in.ratios->end()) ratio = &it->second;
    }
    XiEstimate e;
    if (cfg.estimator == XiEstimator::marginal) {
      if (!in.target) throw InvalidArgument("compute_siem: marginal estimator needs a target");
      e = xi_marginal(*in.model, *in.target, ratio, s, t, cfg.samples, cfg.seed, p);
    } else {
      if (!in.data) throw InvalidArgument("compute_siem: dsm estimator needs data");
      e = xi_dsm(*in.model, *in.data, ratio, s, t, cfg.samples, cfg.seed, p);
    }
    r.steps.push_back(t);
    r.xi.push_back(e.value);
    r.se.push_back(e.se);
  }
  r.mu_phi = smooth_bias(r.xi, cfg.smoothing_sigma);
  for (auto& w : windows) {
    const std::vector<double> slice(r.xi.begin() + static_cast<std::ptrdiff_t>(w.start),
                                    r.xi.begin() + static_cast<std::ptrdiff_t>(w.end) + 1);
    const auto mu = smooth_bias(slice, cfg.smoothing_sigma);
    r.windows.push_back({w, siem_score(slice, mu, r.dt, {w.name, 0, slice.size() - 1})});
  }
  return r;
}

/// Coefficient of variation of phi over standard-normal probes in d dimensions.
inline double concentration_cv(const LorentzParams& p, std::size_t n, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("concentration_cv: need n >= 2");
  Vector values(static_cast<Eigen::Index>(n));
  Vector x(p.d);
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = CounterRng::stream(seed, Stream::experiment, 0xC0, i);
    for (int j = 0; j < p.d; ++j) x[j] = rng.normal();
    values[static_cast<Eigen::Index>(i)] = lorentz_phi(x, p);
  }
  const double mean = values.mean();
  const double sd = std::sqrt((values.array() - mean).square().sum() / static_cast<double>(n - 1));
  return sd / mean;
}

}  // namespace siem
