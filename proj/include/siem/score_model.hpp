#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/gaussian_mixture.hpp"
#include "siem/mlp.hpp"
#include "siem/rng.hpp"
#include "siem/schedule.hpp"
#include "siem/types.hpp"

namespace siem {

struct ScoreModelInfo {
  std::string kind;         // "exact", "corrupted", "affine", "mlp"
  std::string detail;       // human-readable parameters
  std::size_t training_steps = 0;
};

/// Score field s(t, x) indexed by reverse step t. Immutable and cheap to copy.
class ScoreModel {
 public:
  class Impl {
   public:
    virtual ~Impl() = default;
    virtual Eigen::Index dim() const = 0;
    /// Writes the score of every row of `points` into the matching row of `out`.
    virtual void evaluate(std::size_t t, const Matrix& points, Matrix& out) const = 0;
  };

  ScoreModel(std::shared_ptr<const Impl> impl, ScoreModelInfo info)
      : impl_(std::move(impl)), info_(std::move(info)) {
    if (!impl_) throw InvalidArgument("ScoreModel needs an implementation");
  }

  Eigen::Index dim() const { return impl_->dim(); }
  const ScoreModelInfo& info() const noexcept { return info_; }

  Matrix evaluate(std::size_t t, const Matrix& points) const {
    if (points.cols() != dim())
      throw InvalidArgument("score model of dimension " + std::to_string(dim()) + " given points of dimension " +
                            std::to_string(points.cols()));
    Matrix out(points.rows(), points.cols());
    impl_->evaluate(t, points, out);
    return out;
  }

  Vector operator()(std::size_t t, const Vector& x) const {
    Matrix p = x.transpose();
    return evaluate(t, p).row(0).transpose();
  }

 private:
  std::shared_ptr<const Impl> impl_;
  ScoreModelInfo info_;
};

namespace detail {

class ExactScore final : public ScoreModel::Impl {
 public:
  ExactScore(const GaussianMixture& gm, const NoiseSchedule& s) {
    marginals_.reserve(s.steps());
    for (std::size_t t = 0; t < s.steps(); ++t) {
      const auto c = transition_coeffs(s, s.forward_index(t));
      marginals_.push_back(gm.diffuse(c.a, c.b));
    }
  }
  Eigen::Index dim() const override { return marginals_.front().dim(); }
  void evaluate(std::size_t t, const Matrix& points, Matrix& out) const override {
    if (t >= marginals_.size()) throw InvalidArgument("exact score: reverse step out of range");
    out = marginals_[t].score(points);
  }

 private:
  std::vector<GaussianMixture> marginals_;
};

}  // namespace detail

/// Zero-error model: the analytic score of the diffused mixture at each step.
inline ScoreModel exact_score(const GaussianMixture& gm, const NoiseSchedule& s) {
  return ScoreModel(std::make_shared<detail::ExactScore>(gm, s), {"exact", "analytic marginal score", 0});
}

enum class BiasPattern { constant, linear, radial };

inline BiasPattern parse_bias_pattern(const std::string& name) {
  if (name == "constant") return BiasPattern::constant;
  if (name == "linear") return BiasPattern::linear;
  if (name == "radial") return BiasPattern::radial;
  throw InvalidArgument("unknown bias pattern '" + name + "' (expected constant, linear or radial)");
}

inline std::string to_string(BiasPattern p) {
  switch (p) {
    case BiasPattern::constant: return "constant";
    case BiasPattern::linear: return "linear";
    case BiasPattern::radial: return "radial";
  }
  return "?";
}

/// Systematic bias plus a frozen random field added to a base score.
struct CorruptionSpec {
  double bias_amplitude = 0.0;
  BiasPattern bias_pattern = BiasPattern::constant;
  double noise_amplitude = 0.0;
  double noise_correlation_length = 0.5;
  std::uint64_t seed = 0;
  int noise_features = 64;

  void validate() const {
    if (!(bias_amplitude >= 0.0) || !(noise_amplitude >= 0.0))
      throw InvalidArgument("corruption amplitudes must be >= 0");
    if (!(noise_correlation_length > 0.0)) throw InvalidArgument("corruption correlation length must be > 0");
    if (noise_features < 1) throw InvalidArgument("corruption needs at least one random feature");
  }
};

/// Deterministic bias field B(x).
inline void bias_field(BiasPattern pattern, const double* x, Eigen::Index d, double* out) {
  switch (pattern) {
    case BiasPattern::constant:
      for (Eigen::Index j = 0; j < d; ++j) out[j] = 1.0;
      return;
    case BiasPattern::linear:
      for (Eigen::Index j = 0; j < d; ++j) out[j] = x[j];
      return;
    case BiasPattern::radial: {
      double r2 = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) r2 += x[j] * x[j];
      const double s = 1.0 / std::sqrt(1.0 + r2);
      for (Eigen::Index j = 0; j < d; ++j) out[j] = x[j] * s;
      return;
    }
  }
}

/// Smooth random vector field, white across reverse steps. Each component is
/// a random-Fourier-feature draw of a unit-variance Gaussian process with a
/// squared-exponential kernel of the given length scale; the realization is a
/// pure function of (seed, t, component).
class FrozenNoiseField {
 public:
  FrozenNoiseField(Eigen::Index dim, double length, int features, std::uint64_t seed)
      : dim_(dim), length_(length), features_(features), seed_(seed) {}

  /// Adds amplitude * N(t, x) to every row of `out`.
  void accumulate(std::size_t t, const Matrix& points, double amplitude, Matrix& out) const {
    const Eigen::Index d = dim_;
    const double norm = amplitude * std::sqrt(2.0 / features_);
    Eigen::MatrixXd freq(features_, d);
    Eigen::VectorXd phase(features_);
    for (Eigen::Index c = 0; c < d; ++c) {
      auto rng = CounterRng::stream(seed_, Stream::corruption_field, t, static_cast<std::uint64_t>(c));
      for (int f = 0; f < features_; ++f) {
        for (Eigen::Index j = 0; j < d; ++j) freq(f, j) = rng.normal() / length_;
        phase[f] = 2.0 * std::numbers::pi * rng.uniform();
      }
      // Elementwise in a fixed order so a row's value does not depend on the batch.
      Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(points.rows());
      Eigen::ArrayXd arg(points.rows());
      for (int f = 0; f < features_; ++f) {
        arg = points.col(0).array() * freq(f, 0);
        for (Eigen::Index j = 1; j < d; ++j) arg += points.col(j).array() * freq(f, j);
        acc += (arg + phase[f]).cos();
      }
      out.col(c).array() += norm * acc;
    }
  }

 private:
  Eigen::Index dim_;
  double length_;
  int features_;
  std::uint64_t seed_;
};

namespace detail {

class CorruptedScore final : public ScoreModel::Impl {
 public:
  CorruptedScore(ScoreModel base, CorruptionSpec spec)
      : base_(std::move(base)),
        spec_(spec),
        noise_(base_.dim(), spec.noise_correlation_length, spec.noise_features, spec.seed) {}
  Eigen::Index dim() const override { return base_.dim(); }
  void evaluate(std::size_t t, const Matrix& points, Matrix& out) const override {
    out = base_.evaluate(t, points);
    const Eigen::Index d = dim();
    if (spec_.bias_amplitude != 0.0) {
      Vector b(d);
      for (Eigen::Index r = 0; r < points.rows(); ++r) {
        bias_field(spec_.bias_pattern, points.row(r).data(), d, b.data());
        out.row(r) += spec_.bias_amplitude * b.transpose();
      }
    }
    if (spec_.noise_amplitude != 0.0) noise_.accumulate(t, points, spec_.noise_amplitude, out);
  }

 private:
  ScoreModel base_;
  CorruptionSpec spec_;
  FrozenNoiseField noise_;
};

}  // namespace detail

/// base + bias_amplitude * B(x) + noise_amplitude * N_seed(t, x).
inline ScoreModel corrupt(const ScoreModel& base, const CorruptionSpec& spec) {
  spec.validate();
  ScoreModelInfo info{"corrupted",
                      base.info().kind + " + bias " + to_string(spec.bias_pattern) + "*" +
                          std::to_string(spec.bias_amplitude) + " + noise*" + std::to_string(spec.noise_amplitude),
                      base.info().training_steps};
  return ScoreModel(std::make_shared<detail::CorruptedScore>(base, spec), std::move(info));
}

namespace detail {

class AffineScore final : public ScoreModel::Impl {
 public:
  AffineScore(std::vector<Vector> slopes, std::vector<Vector> offsets)
      : slopes_(std::move(slopes)), offsets_(std::move(offsets)) {}
  Eigen::Index dim() const override { return slopes_.front().size(); }
  void evaluate(std::size_t t, const Matrix& points, Matrix& out) const override {
    if (t >= slopes_.size()) throw InvalidArgument("affine score: reverse step out of range");
    for (Eigen::Index r = 0; r < points.rows(); ++r)
      out.row(r) = (points.row(r).array() * slopes_[t].transpose().array() + offsets_[t].transpose().array()).matrix();
  }

 private:
  std::vector<Vector> slopes_;
  std::vector<Vector> offsets_;
};

}  // namespace detail

/// Per-step diagonal affine field s(t, x) = slope_t * x + offset_t.
inline ScoreModel affine_score(std::vector<Vector> slopes, std::vector<Vector> offsets) {
  if (slopes.empty() || slopes.size() != offsets.size()) throw InvalidArgument("affine score: bad coefficient lists");
  return ScoreModel(std::make_shared<detail::AffineScore>(std::move(slopes), std::move(offsets)),
                    {"affine", "per-step diagonal affine field", 0});
}

/// Affine model for an isotropic Gaussian target: the exact score with its
/// slope scaled by (1 + slope_error) plus a constant offset. The true marginal
/// score is affine, so every member of this family is exactly realizable.
inline ScoreModel perturbed_gaussian_score(const Vector& mean, double variance, const NoiseSchedule& s,
                                           double slope_error, const Vector& offset) {
  std::vector<Vector> slopes, offsets;
  for (std::size_t t = 0; t < s.steps(); ++t) {
    const auto c = transition_coeffs(s, s.forward_index(t));
    const double var_t = c.a * c.a * variance + c.b * c.b;
    const double slope = -(1.0 + slope_error) / var_t;
    slopes.push_back(Vector::Constant(mean.size(), slope));
    offsets.push_back(-slope * c.a * mean + offset);
  }
  return affine_score(std::move(slopes), std::move(offsets));
}

namespace detail {

/// Noise-prediction network wrapped as a score: s = net(x, k/K) / (-b_k).
class MlpScore final : public ScoreModel::Impl {
 public:
  MlpScore(std::shared_ptr<const Mlp> net, const NoiseSchedule& s) : net_(std::move(net)), steps_(s.steps()) {
    for (std::size_t t = 0; t < s.steps(); ++t) {
      const std::size_t k = s.forward_index(t);
      const auto c = transition_coeffs(s, k);
      if (!(c.b > 0.0)) throw InvalidArgument("network score needs b > 0 at every step");
      inv_neg_b_.push_back(-1.0 / c.b);
      time_.push_back(static_cast<double>(k) / static_cast<double>(s.steps()));
    }
  }
  Eigen::Index dim() const override { return net_->outputs(); }
  void evaluate(std::size_t t, const Matrix& points, Matrix& out) const override {
    if (t >= steps_) throw InvalidArgument("network score: reverse step out of range");
    const Eigen::Index d = dim();
    Eigen::MatrixXd input(d + 1, points.rows());
    input.topRows(d) = points.transpose();
    input.row(d).setConstant(time_[t]);
    out = (net_->forward(input).transpose() * inv_neg_b_[t]);
  }

 private:
  std::shared_ptr<const Mlp> net_;
  std::size_t steps_;
  std::vector<double> inv_neg_b_;
  std::vector<double> time_;
};

}  // namespace detail

inline ScoreModel mlp_score(const Mlp& net, const NoiseSchedule& s, std::size_t training_steps = 0) {
  if (net.inputs() != net.outputs() + 1) throw InvalidArgument("score network must map (x, time) to x-space");
  return ScoreModel(std::make_shared<detail::MlpScore>(std::make_shared<const Mlp>(net), s),
                    {"mlp", "noise-prediction perceptron", training_steps});
}

enum class Optimizer { sgd, adam };

inline Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::sgd;
  if (name == "adam") return Optimizer::adam;
  throw InvalidArgument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

inline std::string to_string(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

struct ScoreTrainingConfig {
  std::size_t steps = 20000;
  int width = 128;
  std::size_t batch = 256;
  double learning_rate = 1e-3;
  std::size_t checkpoints = 8;
  std::size_t loss_probe = 2048;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
};

struct ScoreCheckpoint {
  std::size_t step;
  double loss;  // denoising loss on a fixed probe set
  Mlp network;
  ScoreModel model;
};

/// Step 0 followed by count-1 checkpoints doubling up to `steps`.
inline std::vector<std::size_t> checkpoint_steps(std::size_t steps, std::size_t count) {
  if (count == 0) throw InvalidArgument("need at least one checkpoint");
  if (count == 1) return {steps};
  std::vector<std::size_t> out{0};
  for (std::size_t i = 1; i < count; ++i) {
    const double frac = std::ldexp(1.0, -static_cast<int>(count - 1 - i));
    const auto s = static_cast<std::size_t>(std::llround(frac * static_cast<double>(steps)));
    if (s <= out.back())
      throw InvalidArgument("too few training steps for " + std::to_string(count) + " distinct checkpoints");
    out.push_back(s);
  }
  return out;
}

namespace detail {

struct DenoisingBatch {
  Eigen::MatrixXd input;   // (d+1) x n
  Eigen::MatrixXd target;  // d x n, the drawn noise z
};

inline DenoisingBatch denoising_batch(const Matrix& data, const NoiseSchedule& s, std::size_t n, CounterRng& rng) {
  const Eigen::Index d = data.cols();
  const auto rows = static_cast<std::size_t>(data.rows());
  DenoisingBatch b{Eigen::MatrixXd(d + 1, static_cast<Eigen::Index>(n)), Eigen::MatrixXd(d, static_cast<Eigen::Index>(n))};
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const auto row = static_cast<Eigen::Index>(rng.index(rows));
    const std::size_t k = rng.index(s.steps());
    const auto c = transition_coeffs(s, k);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double z = rng.normal();
      b.target(j, col) = z;
      b.input(j, col) = c.a * data(row, j) + c.b * z;
    }
    b.input(d, col) = static_cast<double>(k) / static_cast<double>(s.steps());
  }
  return b;
}

inline double denoising_loss(const Mlp& net, const DenoisingBatch& b) {
  return (net.forward(b.input) - b.target).colwise().squaredNorm().mean();
}

}  // namespace detail

/// Fits a 2-hidden-layer perceptron to predict the forward noise z from
/// (x_k, k/K) on the denoising objective, returning snapshots at
/// checkpoint_steps(config.steps, config.checkpoints).
inline std::vector<ScoreCheckpoint> train_mlp_score(const Matrix& data, const NoiseSchedule& s,
                                                    const ScoreTrainingConfig& config) {
  if (data.rows() == 0) throw InvalidArgument("train_mlp_score: empty data set");
  if (config.steps < 1) throw InvalidArgument("train_mlp_score: steps must be >= 1");
  if (config.batch < 1 || config.width < 1) throw InvalidArgument("train_mlp_score: batch and width must be >= 1");
  const int d = static_cast<int>(data.cols());
  Mlp net({d + 1, config.width, config.width, d}, config.seed);
  const Sgd sgd(config.learning_rate);
  Adam adam(net, config.learning_rate);

  auto probe_rng = CounterRng::stream(config.seed, Stream::training_batch, ~0ULL);
  const auto probe = detail::denoising_batch(data, s, config.loss_probe, probe_rng);

  const auto marks = checkpoint_steps(config.steps, config.checkpoints);
  std::vector<ScoreCheckpoint> out;
  auto snapshot = [&](std::size_t step) {
    const double loss = detail::denoising_loss(net, probe);
    if (!std::isfinite(loss) || !net.finite())
      throw NumericalError("score training diverged at step " + std::to_string(step));
    out.push_back({step, loss, net, mlp_score(net, s, step)});
  };

  std::size_t next = 0;
  if (marks[next] == 0) {
    snapshot(0);
    ++next;
  }
  Mlp::Trace trace;
  const double scale = 2.0 / static_cast<double>(config.batch);
  for (std::size_t step = 1; step <= config.steps && next < marks.size(); ++step) {
    auto rng = CounterRng::stream(config.seed, Stream::training_batch, step);
    const auto batch = detail::denoising_batch(data, s, config.batch, rng);
    const Eigen::MatrixXd pred = net.forward(batch.input, trace);
    const Eigen::MatrixXd grad = scale * (pred - batch.target);
    if (config.optimizer == Optimizer::adam)
      adam.step(net, net.backward(trace, grad));
    else
      sgd.step(net, net.backward(trace, grad));
    if (step == marks[next]) {
      snapshot(step);
      ++next;
    }
  }
  return out;
}

}  // namespace siem
