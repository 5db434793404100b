#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "siem/errors.hpp"
#include "siem/rng.hpp"
#include "siem/schedule.hpp"
#include "siem/score_model.hpp"
#include "siem/types.hpp"

namespace siem {

enum class SampleSource { target, generated };

/// Points at one reverse step. reverse_step == K marks the finished output.
struct SampleBatch {
  Matrix points;
  std::size_t reverse_step = 0;
  SampleSource source = SampleSource::target;
  std::uint64_t seed = 0;
};

struct PerturbedBatch {
  SampleBatch batch;
  Matrix noise;  // z with x_k = a x0 + b z
};

/// x_k = a x0 + b z, z ~ N(0, I) drawn per row from (seed, k, row).
inline PerturbedBatch forward_perturb(const Matrix& x0, const NoiseSchedule& s, std::size_t k, std::uint64_t seed) {
  const auto c = transition_coeffs(s, k);
  PerturbedBatch out;
  out.noise.resize(x0.rows(), x0.cols());
  for (Eigen::Index r = 0; r < x0.rows(); ++r) {
    auto rng = CounterRng::stream(seed, Stream::forward_noise, k, static_cast<std::uint64_t>(r));
    for (Eigen::Index j = 0; j < x0.cols(); ++j) out.noise(r, j) = rng.normal();
  }
  out.batch.points = c.a * x0 + c.b * out.noise;
  out.batch.reverse_step = s.reverse_index(k);
  out.batch.source = SampleSource::target;
  out.batch.seed = seed;
  return out;
}

namespace detail {

inline void require_finite(const Matrix& m, const char* what, std::size_t t) {
  if (m.allFinite()) return;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    if (!m.row(r).allFinite())
      throw NumericalError(std::string(what) + " is non-finite at reverse step " + std::to_string(t) + ", chain " +
                           std::to_string(r));
}

}  // namespace detail

/// One DDPM ancestral update at reverse step t (forward index k):
/// x <- (x + beta_k s(t, x)) / sqrt(1 - beta_k) + sqrt(beta_k) eps, no eps on the last step.
/// Chain r draws eps from (seed, t, r) only.
inline Matrix ancestral_step(const ScoreModel& m, const NoiseSchedule& s, const Matrix& x, std::size_t t,
                             std::uint64_t seed) {
  const std::size_t k = s.forward_index(t);
  const double beta = s.betas()[k];
  const Matrix score = m.evaluate(t, x);
  detail::require_finite(score, "score", t);
  Matrix next = (x + beta * score) / std::sqrt(1.0 - beta);
  if (k > 0 && beta > 0.0) {
    const double sigma = std::sqrt(beta);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      auto rng = CounterRng::stream(seed, Stream::ancestral_noise, t, static_cast<std::uint64_t>(r));
      for (Eigen::Index j = 0; j < x.cols(); ++j) next(r, j) += sigma * rng.normal();
    }
  }
  return next;
}

/// Runs n chains from the N(0, I) prior through all K steps. The snapshot at
/// index t is the state before step t is applied (so {0} is the prior draw);
/// index K is the finished sample.
inline std::map<std::size_t, SampleBatch> sample_generated(const ScoreModel& m, const NoiseSchedule& s, std::size_t n,
                                                           std::uint64_t seed, const std::set<std::size_t>& record_at) {
  if (record_at.empty()) throw InvalidArgument("sample_generated: record_at is empty");
  if (n < 1) throw InvalidArgument("sample_generated: need at least one chain");
  const std::size_t K = s.steps();
  if (*record_at.rbegin() > K)
    throw InvalidArgument("sample_generated: record index " + std::to_string(*record_at.rbegin()) + " exceeds K");
  Matrix x(static_cast<Eigen::Index>(n), m.dim());
  for (std::size_t r = 0; r < n; ++r) {
    auto rng = CounterRng::stream(seed, Stream::prior, r);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(static_cast<Eigen::Index>(r), j) = rng.normal();
  }
  std::map<std::size_t, SampleBatch> out;
  const std::size_t last = *record_at.rbegin();
  for (std::size_t t = 0;; ++t) {
    if (record_at.count(t)) out[t] = SampleBatch{x, t, SampleSource::generated, seed};
    if (t == last) break;
    x = ancestral_step(m, s, x, t, seed);
  }
  return out;
}

/// Finished samples only.
inline Matrix generate(const ScoreModel& m, const NoiseSchedule& s, std::size_t n, std::uint64_t seed) {
  return sample_generated(m, s, n, seed, {s.steps()}).at(s.steps()).points;
}

}  // namespace siem
