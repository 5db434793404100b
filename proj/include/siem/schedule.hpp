#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "siem/errors.hpp"

namespace siem {

/// Discrete variance-preserving diffusion schedule.
///
/// Forward index k runs 0..K-1 from data towards noise. Reverse index t runs
/// 0..K-1 from the prior back to data and maps to k = K-1-t.
class NoiseSchedule {
 public:
  /// Builds a schedule from explicit per-step variances in [0, 1).
  static NoiseSchedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw InvalidArgument("noise schedule needs at least one step");
    NoiseSchedule s;
    s.betas_ = std::move(betas);
    s.alphas_.reserve(s.betas_.size());
    s.alpha_bar_.reserve(s.betas_.size());
    long double running = 1.0L;
    for (double beta : s.betas_) {
      if (!(beta >= 0.0 && beta < 1.0))
        throw InvalidArgument("noise schedule beta outside [0, 1): " + std::to_string(beta));
      s.alphas_.push_back(1.0 - beta);
      running *= 1.0L - static_cast<long double>(beta);
      s.alpha_bar_.push_back(static_cast<double>(running));
    }
    s.beta_start_ = s.betas_.front();
    s.beta_end_ = s.betas_.back();
    return s;
  }

  std::size_t steps() const noexcept { return betas_.size(); }
  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bar() const noexcept { return alpha_bar_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  /// Time increment of one step on the unit interval.
  double dt() const noexcept { return 1.0 / static_cast<double>(steps()); }

  std::size_t forward_index(std::size_t t) const {
    check_index(t, "reverse");
    return steps() - 1 - t;
  }
  std::size_t reverse_index(std::size_t k) const {
    check_index(k, "forward");
    return steps() - 1 - k;
  }

  void check_index(std::size_t i, const char* kind) const {
    if (i >= steps())
      throw InvalidArgument(std::string(kind) + " step index " + std::to_string(i) +
                            " out of range [0, " + std::to_string(steps()) + ")");
  }

 private:
  NoiseSchedule() = default;

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bar_;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
};

/// Linear ramp of variances from beta_start to beta_end over K steps.
inline NoiseSchedule linear_beta_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw InvalidArgument("linear_beta_schedule: steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidArgument("linear_beta_schedule: need 0 < beta_start <= beta_end < 1");
  std::vector<double> betas(steps);
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    const double span = beta_end - beta_start;
    const double last = static_cast<double>(steps - 1);
    for (std::size_t k = 0; k < steps; ++k)
      betas[k] = beta_start + span * static_cast<double>(k) / last;
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

/// Forward kernel from data to step k: x_k = a x_0 + b z.
struct TransitionCoeffs {
  double a;
  double b;
};

inline TransitionCoeffs transition_coeffs(const NoiseSchedule& s, std::size_t k) {
  s.check_index(k, "forward");
  const double ab = s.alpha_bar()[k];
  return {std::sqrt(ab), std::sqrt(1.0 - ab)};
}

/// Reverse-time drift and diffusion coefficients at reverse step t.
/// f_bar = -beta_k / 2 and g_bar = sqrt(beta_k), with k the forward index of t.
/// The forward drift is taken as -f x (decaying), so f_bar enters reverse
/// dynamics with the sign convention of the forward kernel above.
struct ReverseCoeffs {
  double f_bar;
  double g_bar;
};

inline ReverseCoeffs reverse_coeffs(const NoiseSchedule& s, std::size_t t) {
  const std::size_t k = s.forward_index(t);
  const double beta = s.betas()[k];
  return {-0.5 * beta, std::sqrt(beta)};
}

}  // namespace siem
