#pragma once

#include <cmath>
#include <numbers>

#include "siem/errors.hpp"
#include "siem/types.hpp"

namespace siem {

struct LorentzParams {
  double epsilon = 1.0;
  int d = 1;

  /// epsilon = d.
  static LorentzParams defaults(int d) { return {static_cast<double>(d), d}; }

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw InvalidArgument("Lorentz epsilon must be > 0");
    if (d < 1) throw InvalidArgument("Lorentz dimension must be >= 1");
  }
};

/// log of Gamma((1+d)/2) / (pi^((d+1)/2) eps^(d/2)).
inline double lorentz_log_norm(const LorentzParams& p) {
  p.validate();
  const double h = 0.5 * (p.d + 1);
  return std::lgamma(h) - h * std::log(std::numbers::pi) - 0.5 * p.d * std::log(p.epsilon);
}

inline double lorentz_phi(const Eigen::Ref<const Vector>& x, const LorentzParams& p) {
  if (x.size() != p.d) throw InvalidArgument("lorentz_phi: point dimension differs from d");
  return std::exp(lorentz_log_norm(p) - 0.5 * (p.d + 1) * std::log1p(x.squaredNorm() / p.epsilon));
}

/// x / (eps + |x|^2), the direction shared by grad phi and the xi integrand.
inline Vector lorentz_weight(const Eigen::Ref<const Vector>& x, const LorentzParams& p) {
  return x / (p.epsilon + x.squaredNorm());
}

/// grad phi = -(d+1) x / (eps + |x|^2) phi.
inline Vector lorentz_grad_identity(const Eigen::Ref<const Vector>& x, const LorentzParams& p) {
  return -(p.d + 1) * lorentz_weight(x, p) * lorentz_phi(x, p);
}

}  // namespace siem
