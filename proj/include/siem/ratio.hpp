#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/mlp.hpp"
#include "siem/rng.hpp"
#include "siem/sampler.hpp"
#include "siem/types.hpp"

namespace siem {

struct RatioConfig {
  int hidden = 64;
  double learning_rate = 1e-3;
  std::size_t batch = 512;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  double validation_fraction = 0.2;
  double clamp_low = 0.01;
  double clamp_high = 100.0;
  std::size_t min_samples = 100;
  std::uint64_t seed = 0;
};

struct RatioDiagnostics {
  std::vector<double> validation_losses;  // one per epoch run
  std::size_t epochs_used = 0;
  std::size_t best_epoch = 0;
  double best_validation_loss = std::numeric_limits<double>::infinity();
  double validation_balanced_accuracy = 0.0;
};

/// Odds of a probability, clamped. p = 0.5 gives exactly 1.
inline double ratio_from_probability(double p, double low = 0.01, double high = 100.0) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("probability outside [0, 1]");
  if (p >= 1.0) return high;
  return std::clamp(p / (1.0 - p), low, high);
}

inline double ratio_from_logit(double logit, double low = 0.01, double high = 100.0) {
  return std::clamp(std::exp(std::clamp(logit, -700.0, 700.0)), low, high);
}

/// Classifier-based estimate of u_t / v_t at one reverse step (generated = 1, target = 0).
class RatioModel {
 public:
  RatioModel(Mlp net, Vector center, Vector scale, double log_prior, std::size_t reverse_step, double low,
             double high, RatioDiagnostics diagnostics)
      : net_(std::move(net)),
        center_(std::move(center)),
        scale_(std::move(scale)),
        log_prior_(log_prior),
        step_(reverse_step),
        low_(low),
        high_(high),
        diag_(std::move(diagnostics)) {
    if (!(0.0 < low_ && low_ < 1.0 && 1.0 < high_)) throw InvalidArgument("ratio clamp needs 0 < low < 1 < high");
  }

  std::size_t reverse_step() const noexcept { return step_; }
  double clamp_low() const noexcept { return low_; }
  double clamp_high() const noexcept { return high_; }
  const RatioDiagnostics& diagnostics() const noexcept { return diag_; }
  Eigen::Index dim() const noexcept { return center_.size(); }

  /// Prior-corrected log-odds per row.
  Vector logits(const Matrix& points) const {
    if (points.cols() != dim()) throw InvalidArgument("ratio model dimension mismatch");
    const Eigen::MatrixXd input = standardize(points);
    return (net_.forward(input).row(0).transpose().array() + log_prior_).matrix();
  }

  Vector estimate(const Matrix& points) const {
    Vector l = logits(points);
    for (Eigen::Index i = 0; i < l.size(); ++i) l[i] = ratio_from_logit(l[i], low_, high_);
    return l;
  }

  double estimate(const Vector& x) const {
    const Matrix p = x.transpose();
    return estimate(p)[0];
  }

  Eigen::MatrixXd standardize(const Matrix& points) const {
    Eigen::MatrixXd input = points.transpose();
    input.colwise() -= center_;
    input.array().colwise() /= scale_.array();
    return input;
  }

 private:
  Mlp net_;
  Vector center_;
  Vector scale_;
  double log_prior_;
  std::size_t step_;
  double low_;
  double high_;
  RatioDiagnostics diag_;
};

inline double estimate_ratio(const RatioModel& m, const Vector& x) { return m.estimate(x); }

namespace detail {

inline bool all_identical(const Matrix& m) {
  for (Eigen::Index r = 1; r < m.rows(); ++r)
    if (m.row(r) != m.row(0)) return false;
  return true;
}

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace detail

/// Trains a 2-hidden-layer logistic classifier with Adam on the log-loss,
/// 80/20 split, early stopping on validation loss. Weights are initialized
/// from (seed, reverse step).
inline RatioModel train_ratio(const SampleBatch& gen, const SampleBatch& real, const RatioConfig& cfg) {
  if (gen.reverse_step != real.reverse_step)
    throw InvalidArgument("train_ratio: batches are at different reverse steps");
  if (gen.points.cols() != real.points.cols()) throw InvalidArgument("train_ratio: dimension mismatch");
  if (static_cast<std::size_t>(gen.points.rows()) < cfg.min_samples ||
      static_cast<std::size_t>(real.points.rows()) < cfg.min_samples)
    throw InvalidArgument("train_ratio: each batch needs at least " + std::to_string(cfg.min_samples) + " samples");
  if (detail::all_identical(gen.points) || detail::all_identical(real.points))
    throw InvalidArgument("train_ratio: degenerate batch (all points identical)");

  const Eigen::Index d = gen.points.cols();
  const Eigen::Index n_gen = gen.points.rows();
  const Eigen::Index n = n_gen + real.points.rows();
  Matrix all(n, d);
  all.topRows(n_gen) = gen.points;
  all.bottomRows(real.points.rows()) = real.points;
  Eigen::VectorXd label(n);
  label.head(n_gen).setOnes();
  label.tail(real.points.rows()).setZero();

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto split_rng = CounterRng::stream(cfg.seed, Stream::ratio_split, gen.reverse_step);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n)));
  const std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  Vector center = Vector::Zero(d), scale = Vector::Zero(d);
  double train_pos = 0.0;
  for (auto i : train) {
    center += all.row(static_cast<Eigen::Index>(i)).transpose();
    train_pos += label[static_cast<Eigen::Index>(i)];
  }
  center /= static_cast<double>(train.size());
  for (auto i : train) scale += (all.row(static_cast<Eigen::Index>(i)).transpose() - center).cwiseAbs2();
  scale = (scale / static_cast<double>(train.size())).cwiseSqrt();
  for (Eigen::Index j = 0; j < d; ++j)
    if (!(scale[j] > 0.0)) scale[j] = 1.0;
  const double train_neg = static_cast<double>(train.size()) - train_pos;
  if (train_pos < 1.0 || train_neg < 1.0) throw InvalidArgument("train_ratio: a class is missing from the split");
  const double log_prior = std::log(train_neg / train_pos);

  auto gather = [&](const std::vector<std::size_t>& idx, std::size_t from, std::size_t to) {
    Eigen::MatrixXd x(d, static_cast<Eigen::Index>(to - from));
    Eigen::RowVectorXd y(static_cast<Eigen::Index>(to - from));
    for (std::size_t k = from; k < to; ++k) {
      const auto r = static_cast<Eigen::Index>(idx[k]);
      x.col(static_cast<Eigen::Index>(k - from)) = ((all.row(r).transpose() - center).array() / scale.array()).matrix();
      y[static_cast<Eigen::Index>(k - from)] = label[r];
    }
    return std::pair{x, y};
  };
  const auto [x_val, y_val] = gather(val, 0, val.size());
  auto val_loss = [&](const Mlp& net) {
    const Eigen::RowVectorXd z = net.forward(x_val).row(0);
    double s = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) s += detail::softplus(z[i]) - y_val[i] * z[i];
    return s / static_cast<double>(z.size());
  };

  Mlp net({static_cast<int>(d), cfg.hidden, cfg.hidden, 1},
          mix64(cfg.seed ^ mix64(static_cast<std::uint64_t>(gen.reverse_step) + 0x1234)));
  Mlp best = net;
  Adam adam(net, cfg.learning_rate);
  RatioDiagnostics diag;
  std::size_t stale = 0;
  Mlp::Trace trace;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    auto rng = CounterRng::stream(cfg.seed, Stream::ratio_shuffle, gen.reverse_step, epoch);
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t from = 0; from < train.size(); from += cfg.batch) {
      const std::size_t to = std::min(train.size(), from + cfg.batch);
      const auto [x, y] = gather(train, from, to);
      const Eigen::MatrixXd z = net.forward(x, trace);
      Eigen::MatrixXd grad(1, z.cols());
      for (Eigen::Index i = 0; i < z.cols(); ++i)
        grad(0, i) = (1.0 / (1.0 + std::exp(-z(0, i))) - y[i]) / static_cast<double>(z.cols());
      adam.step(net, net.backward(trace, grad));
    }
    const double loss = val_loss(net);
    if (!std::isfinite(loss)) throw NumericalError("ratio classifier diverged");
    diag.validation_losses.push_back(loss);
    diag.epochs_used = epoch + 1;
    if (loss < diag.best_validation_loss) {
      diag.best_validation_loss = loss;
      diag.best_epoch = epoch + 1;
      best = net;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  const Eigen::RowVectorXd z = best.forward(x_val).row(0);
  double tp = 0, pos = 0, tn = 0, neg = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const bool predicted = z[i] > 0.0;
    if (y_val[i] > 0.5) {
      pos += 1;
      tp += predicted;
    } else {
      neg += 1;
      tn += !predicted;
    }
  }
  diag.validation_balanced_accuracy = 0.5 * ((pos > 0 ? tp / pos : 0.0) + (neg > 0 ? tn / neg : 0.0));
  return RatioModel(std::move(best), std::move(center), std::move(scale), log_prior, gen.reverse_step, cfg.clamp_low,
                    cfg.clamp_high, std::move(diag));
}

}  // namespace siem
