#pragma once

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/grid.hpp"
#include "siem/rng.hpp"

namespace siem {

/// Truncated Q-Wiener field: eigenvalues lambda_j = scale (1 + |j|^2)^-p on
/// the real Fourier basis of the periodic box, one independent scalar field
/// per component.
struct SpectralNoiseSpec {
  int modes = 16;
  double eigen_decay = 1.5;
  double overall_scale = 1.0;
  int components = 1;

  static SpectralNoiseSpec defaults(int dim) { return {16, 0.5 * dim + 1.0, 1.0, dim}; }
};

class QWienerNoise {
 public:
  QWienerNoise(const SpectralNoiseSpec& spec, const GridGeometry& geometry) : spec_(spec), geom_(geometry) {
    geom_.validate();
    if (spec.modes < 1) throw InvalidArgument("Q-Wiener spec needs modes >= 1");
    if (!(spec.overall_scale >= 0.0)) throw InvalidArgument("Q-Wiener overall scale must be >= 0");
    if (spec.components < 1) throw InvalidArgument("Q-Wiener spec needs at least one component");
    if (!(spec.eigen_decay > 0.5 * geometry.dim))
      throw InvalidArgument("Q-Wiener eigenvalue decay p = " + std::to_string(spec.eigen_decay) +
                            " is not trace class (need p > d/2 = " + std::to_string(0.5 * geometry.dim) + ")");
    const int m = basis_size();
    const double L = geom_.half_width;
    basis_.resize(geom_.cells, m);
    for (int i = 0; i < geom_.cells; ++i) {
      const double x = geom_.center(i);
      basis_(i, 0) = 1.0 / std::sqrt(2.0 * L);
      for (int j = 1; j <= spec.modes; ++j) {
        const double arg = j * std::numbers::pi * (x + L) / L;
        basis_(i, 2 * j - 1) = std::cos(arg) / std::sqrt(L);
        basis_(i, 2 * j) = std::sin(arg) / std::sqrt(L);
      }
    }
    sqrt_lambda_.resize(m, geom_.dim == 2 ? m : 1);
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < sqrt_lambda_.cols(); ++b) {
        const double k2 = wave(a) * wave(a) + (geom_.dim == 2 ? wave(b) * wave(b) : 0.0);
        sqrt_lambda_(a, b) = std::sqrt(spec.overall_scale * std::pow(1.0 + k2, -spec.eigen_decay));
      }
  }

  const SpectralNoiseSpec& spec() const noexcept { return spec_; }
  const GridGeometry& geometry() const noexcept { return geom_; }

  /// Basis functions per axis: constant, then (cos j, sin j) for j = 1..modes.
  int basis_size() const noexcept { return 2 * spec_.modes + 1; }
  std::size_t modes_per_component() const noexcept {
    return geom_.dim == 2 ? static_cast<std::size_t>(basis_size()) * basis_size() : basis_size();
  }

  /// Standard normal coefficients for all components, from (seed, step) only.
  std::vector<double> draw_normals(std::uint64_t seed, std::uint64_t step) const {
    auto rng = CounterRng::stream(seed, Stream::spectral_noise, step);
    std::vector<double> xi(modes_per_component() * spec_.components);
    for (double& v : xi) v = rng.normal();
    return xi;
  }

  /// Sum_j sqrt(lambda_j dt) xi_j e_j per component for given coefficients.
  VectorGridField increment(double dt, const std::vector<double>& normals) const {
    if (!(dt > 0.0)) throw InvalidArgument("Q-Wiener increment needs dt > 0");
    if (normals.size() != modes_per_component() * spec_.components)
      throw InvalidArgument("Q-Wiener increment: wrong number of coefficients");
    const double sdt = std::sqrt(dt);
    const int m = basis_size();
    VectorGridField out(spec_.components, GridField(geom_.size(), 0.0));
    for (int c = 0; c < spec_.components; ++c) {
      const double* xi = normals.data() + c * modes_per_component();
      if (geom_.dim == 1) {
        Eigen::VectorXd coef(m);
        for (int a = 0; a < m; ++a) coef[a] = sdt * sqrt_lambda_(a, 0) * xi[a];
        Eigen::Map<Eigen::VectorXd>(out[c].data(), geom_.cells) = basis_ * coef;
      } else {
        Eigen::MatrixXd coef(m, m);
        for (int b = 0; b < m; ++b)
          for (int a = 0; a < m; ++a) coef(a, b) = sdt * sqrt_lambda_(a, b) * xi[a + m * b];
        // F(i0, i1) = sum_ab E(i0, a) C(a, b) E(i1, b); column-major F matches the cell layout.
        Eigen::Map<Eigen::MatrixXd>(out[c].data(), geom_.cells, geom_.cells) = basis_ * coef * basis_.transpose();
      }
    }
    return out;
  }

  VectorGridField sample_increment(double dt, std::uint64_t seed, std::uint64_t step) const {
    return increment(dt, draw_normals(seed, step));
  }

 private:
  static double wave(int basis_index) noexcept { return static_cast<double>((basis_index + 1) / 2); }

  SpectralNoiseSpec spec_;
  GridGeometry geom_;
  Eigen::MatrixXd basis_;        // cells x basis_size
  Eigen::MatrixXd sqrt_lambda_;  // basis_size x (basis_size or 1)
};

inline VectorGridField sample_increment(const SpectralNoiseSpec& spec, const GridGeometry& g, double dt,
                                        std::uint64_t seed, std::uint64_t step) {
  return QWienerNoise(spec, g).sample_increment(dt, seed, step);
}

}  // namespace siem
