#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "siem/errors.hpp"
#include "siem/types.hpp"

namespace siem {

struct SinkhornOptions {
  double blur = 0.05;
  double scaling = 0.9;
  double tolerance = 1e-5;           // relative change of the divergence per final-stage sweep
  std::size_t max_iterations = 2000;  // extra sweeps at the final epsilon
};

struct SinkhornResult {
  double w2 = 0.0;          // sqrt(2 max(S, 0))
  double divergence = 0.0;  // debiased S
  double raw = 0.0;         // OT_eps(A, B) before debiasing
  std::size_t stages = 0;
  std::size_t extra_iterations = 0;
  double residual = 0.0;  // relative divergence change over the last sweep
};

namespace detail {

/// Log-domain c-transform: out_i = -eps log sum_j exp(h_j - |x_i - y_j|^2 / (2 eps)).
/// The |x_i|^2 term is pulled out of the log-sum-exp and the kernel is formed
/// one block of x at a time, with each x_i in a contiguous column.
class Softmin {
 public:
  Softmin(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y)
      : x_(x), y_(y), xn_(0.5 * x.rowwise().squaredNorm()), yn_(0.5 * y.rowwise().squaredNorm()) {}

  Eigen::VectorXd operator()(double eps, const Eigen::VectorXd& h) const {
    constexpr Eigen::Index block = 64;
    const Eigen::Index n = x_.rows();
    const Eigen::MatrixXd ys = y_ / eps;
    const Eigen::ArrayXd hh = h.array() - yn_.array() / eps;
    Eigen::VectorXd out(n);
    Eigen::ArrayXXd c;
    for (Eigen::Index i0 = 0; i0 < n; i0 += block) {
      const Eigen::Index cols = std::min(block, n - i0);
      c.resize(ys.rows(), cols);
      c.matrix().noalias() = ys * x_.middleRows(i0, cols).transpose();
      c.colwise() += hh;
      const Eigen::RowVectorXd top = c.colwise().maxCoeff();
      for (Eigen::Index k = 0; k < cols; ++k) {
        const double lse = top[k] + std::log((c.col(k) - top[k]).exp().sum());
        out[i0 + k] = xn_[i0 + k] - eps * lse;
      }
    }
    return out;
  }

 private:
  const Eigen::MatrixXd& x_;
  const Eigen::MatrixXd& y_;
  Eigen::VectorXd xn_;
  Eigen::VectorXd yn_;
};

}  // namespace detail

/// Debiased entropic OT with cost |x-y|^2/2 and epsilon annealed from the
/// squared diameter down to blur^2 by factors scaling^2.
inline SinkhornResult sinkhorn_w2(const Matrix& a_in, const Matrix& b_in, const SinkhornOptions& opt = {}) {
  if (a_in.rows() < 1 || b_in.rows() < 1) throw InvalidArgument("sinkhorn_w2: empty point set");
  if (a_in.cols() != b_in.cols()) throw InvalidArgument("sinkhorn_w2: point sets differ in dimension");
  if (!(opt.blur > 0.0)) throw InvalidArgument("sinkhorn_w2: blur must be > 0");
  if (!(opt.scaling > 0.0 && opt.scaling < 1.0)) throw InvalidArgument("sinkhorn_w2: scaling must be in (0, 1)");
  if (!a_in.allFinite() || !b_in.allFinite()) throw NumericalError("sinkhorn_w2: non-finite input points");

  const Eigen::Index na = a_in.rows(), nb = b_in.rows();
  const Eigen::RowVectorXd center =
      (a_in.colwise().sum() + b_in.colwise().sum()) / static_cast<double>(na + nb);
  const Eigen::MatrixXd x = a_in.rowwise() - center;
  const Eigen::MatrixXd y = b_in.rowwise() - center;
  double diameter = 0.0;
  {
    const Eigen::RowVectorXd lo = x.colwise().minCoeff().cwiseMin(y.colwise().minCoeff());
    const Eigen::RowVectorXd hi = x.colwise().maxCoeff().cwiseMax(y.colwise().maxCoeff());
    diameter = (hi - lo).norm();
  }
  std::vector<double> eps_list;
  const double blur2 = opt.blur * opt.blur;
  eps_list.push_back(std::max(diameter * diameter, blur2));
  for (double e = 2.0 * std::log(diameter); e > 2.0 * std::log(opt.blur); e += 2.0 * std::log(opt.scaling))
    eps_list.push_back(std::exp(e));
  eps_list.push_back(blur2);

  const detail::Softmin xy(x, y), yx(y, x), xx(x, x), yy(y, y);
  const Eigen::VectorXd la = Eigen::VectorXd::Constant(na, -std::log(static_cast<double>(na)));
  const Eigen::VectorXd lb = Eigen::VectorXd::Constant(nb, -std::log(static_cast<double>(nb)));

  double eps = eps_list.front();
  Eigen::VectorXd f_ba = xy(eps, lb), g_ab = yx(eps, la), f_aa = xx(eps, la), g_bb = yy(eps, lb);
  auto sweep = [&](double e) {
    const Eigen::VectorXd ft_ba = xy(e, lb + g_ab / e);
    const Eigen::VectorXd gt_ab = yx(e, la + f_ba / e);
    const Eigen::VectorXd ft_aa = xx(e, la + f_aa / e);
    const Eigen::VectorXd gt_bb = yy(e, lb + g_bb / e);
    f_ba = 0.5 * (f_ba + ft_ba);
    g_ab = 0.5 * (g_ab + gt_ab);
    f_aa = 0.5 * (f_aa + ft_aa);
    g_bb = 0.5 * (g_bb + gt_bb);
    return (f_ba - f_aa).mean() + (g_ab - g_bb).mean();
  };
  SinkhornResult r;
  double previous = 0.0;
  for (double e : eps_list) previous = sweep(e);
  r.stages = eps_list.size();
  for (;;) {
    const double current = sweep(blur2);
    r.residual = std::abs(current - previous) / std::max(1.0, std::abs(current));
    previous = current;
    if (!std::isfinite(current)) throw NumericalError("sinkhorn_w2: non-finite potentials");
    if (r.residual <= opt.tolerance) break;
    if (++r.extra_iterations >= opt.max_iterations)
      throw NumericalError("sinkhorn_w2 did not converge: residual " + std::to_string(r.residual) + " after " +
                           std::to_string(r.stages) + " stages and " + std::to_string(r.extra_iterations) +
                           " extra sweeps");
  }

  eps = blur2;
  const Eigen::VectorXd fl_ba = xy(eps, lb + g_ab / eps);
  const Eigen::VectorXd gl_ab = yx(eps, la + f_ba / eps);
  const Eigen::VectorXd fl_aa = xx(eps, la + f_aa / eps);
  const Eigen::VectorXd gl_bb = yy(eps, lb + g_bb / eps);
  r.raw = fl_ba.mean() + gl_ab.mean();
  r.divergence = (fl_ba - fl_aa).mean() + (gl_ab - gl_bb).mean();
  if (!std::isfinite(r.divergence)) throw NumericalError("sinkhorn_w2: non-finite divergence");
  r.w2 = std::sqrt(2.0 * std::max(r.divergence, 0.0));
  return r;
}

struct FrechetResult {
  double distance = 0.0;
  bool degenerate = false;  // some axis has zero variance in either set
};

/// |m_A - m_B|^2 + sum_i (sqrt(a_i) - sqrt(b_i))^2 over per-axis variances.
inline FrechetResult frechet_gaussian(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("frechet_gaussian: point sets differ in dimension");
  const Eigen::Index d = a.cols();
  if (a.rows() <= d || b.rows() <= d) throw InvalidArgument("frechet_gaussian: need more points than dimensions");
  auto moments = [](const Matrix& m) {
    const Eigen::RowVectorXd mean = m.colwise().mean();
    const Eigen::RowVectorXd var =
        (m.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(m.rows() - 1);
    return std::pair{mean, var};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  FrechetResult r;
  r.distance = (ma - mb).squaredNorm() + (va.cwiseSqrt() - vb.cwiseSqrt()).squaredNorm();
  r.degenerate = (va.array() <= 0.0).any() || (vb.array() <= 0.0).any();
  if (!std::isfinite(r.distance)) throw NumericalError("frechet_gaussian: non-finite distance");
  return r;
}

/// Ranks starting at 1 with ties sharing their average rank.
inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw InvalidArgument("correlation undefined for a constant sequence");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct SpearmanResult {
  double rho = 0.0;
  double p = 1.0;  // two-sided
  bool exact = false;
};

/// Rank correlation. Exact permutation p-value for n <= 8, otherwise the
/// Student t approximation with n - 2 degrees of freedom.
inline SpearmanResult spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw InvalidArgument("spearman: sequences differ in length");
  const std::size_t n = xs.size();
  if (n < 3) throw InvalidArgument("spearman: need at least 3 pairs");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) throw InvalidArgument("spearman: non-finite value");
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  SpearmanResult r;
  r.rho = pearson(rx, ry);
  if (n <= 8) {
    // Doubled ranks are integers, so the statistic compares exactly.
    std::vector<std::int64_t> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = std::llround(2.0 * rx[i]);
      b[i] = std::llround(2.0 * ry[i]);
    }
    const std::int64_t sa = std::accumulate(a.begin(), a.end(), std::int64_t{0});
    const std::int64_t sb = std::accumulate(b.begin(), b.end(), std::int64_t{0});
    auto centered = [&](const std::vector<std::int64_t>& perm) {
      std::int64_t s = 0;
      for (std::size_t i = 0; i < n; ++i) s += a[i] * perm[i];
      const std::int64_t c = static_cast<std::int64_t>(n) * s - sa * sb;
      return c < 0 ? -c : c;
    };
    const std::int64_t observed = centered(b);
    // All n! position orderings, so tied values are counted with multiplicity.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t hits = 0, total = 0;
    std::vector<std::int64_t> cur(n);
    do {
      for (std::size_t i = 0; i < n; ++i) cur[i] = b[idx[i]];
      hits += centered(cur) >= observed;
      ++total;
    } while (std::next_permutation(idx.begin(), idx.end()));
    r.p = static_cast<double>(hits) / static_cast<double>(total);
    r.exact = true;
  } else if (std::abs(r.rho) >= 1.0) {
    r.p = 0.0;
  } else {
    const double df = static_cast<double>(n - 2);
    const double t = r.rho * std::sqrt(df / (1.0 - r.rho * r.rho));
    const boost::math::students_t dist(df);
    r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t))));
  }
  return r;
}

}  // namespace siem
