#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/rng.hpp"
#include "siem/types.hpp"

namespace siem {

/// Mixture of axis-aligned Gaussians with closed-form diffusion.
class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vector> means, std::vector<Vector> variances)
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    if (weights_.empty()) throw InvalidArgument("mixture needs at least one component");
    if (means_.size() != weights_.size() || variances_.size() != weights_.size())
      throw InvalidArgument("mixture weights, means and variances differ in length");
    const Eigen::Index d = means_.front().size();
    if (d < 1) throw InvalidArgument("mixture dimension must be >= 1");
    double total = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (!(weights_[i] >= 0.0)) throw InvalidArgument("mixture weight is negative");
      if (means_[i].size() != d || variances_[i].size() != d)
        throw InvalidArgument("mixture components disagree on dimension");
      if (!(variances_[i].array() > 0.0).all()) throw InvalidArgument("mixture variance must be > 0");
      total += weights_[i];
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidArgument("mixture weights sum to " + std::to_string(total) + ", not 1");
    precompute();
  }

  static GaussianMixture isotropic(const Vector& mean, double variance) {
    return GaussianMixture({1.0}, {mean}, {Vector::Constant(mean.size(), variance)});
  }

  Eigen::Index dim() const noexcept { return means_.front().size(); }
  std::size_t components() const noexcept { return weights_.size(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Vector& mean(std::size_t i) const { return means_.at(i); }
  const Vector& variance(std::size_t i) const { return variances_.at(i); }

  /// Marginal after the forward kernel N(a y, b^2 I).
  GaussianMixture diffuse(double a, double b) const {
    if (!(b >= 0.0)) throw InvalidArgument("diffuse: b must be >= 0");
    std::vector<Vector> means, vars;
    means.reserve(components());
    vars.reserve(components());
    for (std::size_t i = 0; i < components(); ++i) {
      means.push_back(a * means_[i]);
      vars.push_back((a * a) * variances_[i].array() + b * b);
    }
    return GaussianMixture(weights_, std::move(means), std::move(vars));
  }

  double log_density(const Eigen::Ref<const Vector>& x) const {
    check_dim(x.size());
    std::vector<double> logs(components());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < components(); ++i) {
      logs[i] = component_log(i, x);
      top = std::max(top, logs[i]);
    }
    if (!std::isfinite(top)) return top;
    double sum = 0.0;
    for (double l : logs) sum += std::exp(l - top);
    return top + std::log(sum);
  }

  double density(const Eigen::Ref<const Vector>& x) const { return std::exp(log_density(x)); }

  /// Gradient of the log-density: responsibility-weighted component scores.
  Vector score(const Eigen::Ref<const Vector>& x) const {
    check_dim(x.size());
    Vector out(dim());
    score_into(x.data(), out.data());
    return out;
  }
  Vector score(const Vector& x) const { return score(Eigen::Ref<const Vector>(x)); }

  /// Row-wise score of a point set.
  Matrix score(const Matrix& points) const {
    check_dim(points.cols());
    Matrix out(points.rows(), points.cols());
    for (Eigen::Index r = 0; r < points.rows(); ++r) score_into(points.row(r).data(), out.row(r).data());
    return out;
  }

  /// Draws one point into `out` using component choice then per-axis normals.
  void sample_into(CounterRng& rng, double* out) const {
    std::size_t c = components() - 1;
    double u = rng.uniform();
    for (std::size_t i = 0; i + 1 < components(); ++i) {
      if (u < weights_[i]) {
        c = i;
        break;
      }
      u -= weights_[i];
    }
    for (Eigen::Index j = 0; j < dim(); ++j) out[j] = means_[c][j] + std_devs_[c][j] * rng.normal();
  }

  /// n points; point i comes from its own stream so subsets are stable.
  Matrix sample(std::size_t n, std::uint64_t seed, std::uint64_t stream_id = 0) const {
    Matrix out(static_cast<Eigen::Index>(n), dim());
    for (std::size_t i = 0; i < n; ++i) {
      auto rng = CounterRng::stream(seed, Stream::mixture_sample, stream_id, i);
      sample_into(rng, out.row(static_cast<Eigen::Index>(i)).data());
    }
    return out;
  }

 private:
  void precompute() {
    log_norm_.resize(components());
    std_devs_.resize(components());
    const double d = static_cast<double>(dim());
    for (std::size_t i = 0; i < components(); ++i) {
      log_norm_[i] = std::log(weights_[i]) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
                     0.5 * variances_[i].array().log().sum();
      std_devs_[i] = variances_[i].array().sqrt();
    }
  }

  void check_dim(Eigen::Index d) const {
    if (d != dim())
      throw InvalidArgument("point dimension " + std::to_string(d) + " does not match mixture dimension " +
                            std::to_string(dim()));
  }

  double component_log(std::size_t i, const Eigen::Ref<const Vector>& x) const {
    return log_norm_[i] - 0.5 * ((x - means_[i]).array().square() / variances_[i].array()).sum();
  }

  void score_into(const double* x, double* out) const {
    const Eigen::Index d = dim();
    const std::size_t m = components();
    if (m == 1) {
      for (Eigen::Index j = 0; j < d; ++j) out[j] = -(x[j] - means_[0][j]) / variances_[0][j];
      return;
    }
    double logs[16];
    std::vector<double> heap;
    double* l = logs;
    if (m > 16) {
      heap.resize(m);
      l = heap.data();
    }
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      double q = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double r = x[j] - means_[i][j];
        q += r * r / variances_[i][j];
      }
      l[i] = log_norm_[i] - 0.5 * q;
      top = std::max(top, l[i]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      l[i] = std::exp(l[i] - top);
      total += l[i];
    }
    for (Eigen::Index j = 0; j < d; ++j) out[j] = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double r = l[i] / total;
      for (Eigen::Index j = 0; j < d; ++j) out[j] -= r * (x[j] - means_[i][j]) / variances_[i][j];
    }
  }

  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Vector> variances_;
  std::vector<double> log_norm_;
  std::vector<Vector> std_devs_;
};

inline GaussianMixture diffuse(const GaussianMixture& gm, double a, double b) { return gm.diffuse(a, b); }
inline double log_density(const GaussianMixture& gm, const Eigen::Ref<const Vector>& x) { return gm.log_density(x); }
inline Vector true_score(const GaussianMixture& gm, const Eigen::Ref<const Vector>& x) { return gm.score(x); }

/// Score of the forward kernel N(a x0, b^2 I) at x_t.
inline Vector conditional_score(const Eigen::Ref<const Vector>& x_t, const Eigen::Ref<const Vector>& x0, double a,
                                double b) {
  if (!(b > 0.0)) throw InvalidArgument("conditional_score: degenerate kernel (b = 0)");
  if (x_t.size() != x0.size()) throw InvalidArgument("conditional_score: dimension mismatch");
  return -(x_t - a * x0) / (b * b);
}

}  // namespace siem
