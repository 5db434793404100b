#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "siem/errors.hpp"

namespace siem {

/// Periodic box [-L, L]^d split into n cells per axis (d = 1 or 2).
/// Cell (i0, i1) is stored at i0 + n * i1.
struct GridGeometry {
  int dim = 1;
  int cells = 256;
  double half_width = 8.0;

  void validate() const {
    if (dim != 1 && dim != 2) throw InvalidArgument("grid dimension must be 1 or 2");
    if (cells < 3) throw InvalidArgument("grid needs at least 3 cells per axis");
    if (!(half_width > 0.0)) throw InvalidArgument("grid half width must be > 0");
  }

  double spacing() const noexcept { return 2.0 * half_width / cells; }
  double cell_volume() const noexcept { return std::pow(spacing(), dim); }
  std::size_t size() const noexcept {
    return dim == 1 ? static_cast<std::size_t>(cells) : static_cast<std::size_t>(cells) * cells;
  }
  double center(int i) const noexcept { return -half_width + (i + 0.5) * spacing(); }

  /// Coordinates of a cell centre; unused axes are zero.
  std::array<double, 2> point(std::size_t index) const noexcept {
    const int i0 = static_cast<int>(index % cells);
    const int i1 = static_cast<int>(index / cells);
    return {center(i0), dim == 2 ? center(i1) : 0.0};
  }

  /// Periodic neighbour one cell along `axis` in direction +1 or -1.
  std::size_t neighbor(std::size_t index, int axis, int dir) const noexcept {
    const auto n = static_cast<std::size_t>(cells);
    if (axis == 0) {
      const std::size_t i0 = index % n;
      const std::size_t base = index - i0;
      return base + (dir > 0 ? (i0 + 1) % n : (i0 + n - 1) % n);
    }
    const std::size_t i1 = index / n;
    const std::size_t i0 = index % n;
    return i0 + n * (dir > 0 ? (i1 + 1) % n : (i1 + n - 1) % n);
  }
};

using GridField = std::vector<double>;
/// One scalar field per vector component (or axis).
using VectorGridField = std::vector<GridField>;

/// Density values per cell; total mass is sum(values) * cell_volume.
struct GridDensity {
  GridGeometry geometry;
  GridField values;
  std::size_t time_index = 0;

  double mass() const {
    return std::accumulate(values.begin(), values.end(), 0.0) * geometry.cell_volume();
  }

  /// Samples f at cell centres, normalized to unit mass.
  static GridDensity from_function(const GridGeometry& g, const std::function<double(double, double)>& f) {
    g.validate();
    GridDensity u{g, GridField(g.size()), 0};
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto p = g.point(i);
      u.values[i] = f(p[0], p[1]);
      if (!(u.values[i] >= 0.0)) throw InvalidArgument("density function returned a negative or NaN value");
    }
    const double m = u.mass();
    if (!(m > 0.0)) throw InvalidArgument("density function has zero mass on the grid");
    for (double& v : u.values) v /= m;
    return u;
  }
};

/// Isotropic Gaussian discretized on the grid and renormalized.
inline GridDensity gaussian_density(const GridGeometry& g, std::array<double, 2> mean, double variance) {
  return GridDensity::from_function(g, [&](double x, double y) {
    const double dx = x - mean[0];
    const double dy = g.dim == 2 ? y - mean[1] : 0.0;
    return std::exp(-0.5 * (dx * dx + dy * dy) / variance);
  });
}

/// <u, f> = sum u f h^d.
inline double project(const GridDensity& u, const std::function<double(double, double)>& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.values.size(); ++i) {
    const auto p = u.geometry.point(i);
    s += u.values[i] * f(p[0], p[1]);
  }
  return s * u.geometry.cell_volume();
}

}  // namespace siem
