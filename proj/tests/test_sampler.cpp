#include <gtest/gtest.h>

#include <cmath>

#include "siem/metrics.hpp"
#include "siem/sampler.hpp"
#include "siem/siem.hpp"

using namespace siem;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

const NoiseSchedule& schedule() {
  static const NoiseSchedule s = linear_beta_schedule(200, 5e-4, 0.1);
  return s;
}

Eigen::MatrixXd covariance(const Matrix& x) {
  const Matrix c = x.rowwise() - x.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

}  // namespace

TEST(ForwardPerturb, IdentityKernel) {
  const auto s = NoiseSchedule::from_betas({0.0, 0.1});
  const Matrix x0 = GaussianMixture::isotropic(vec({1.0, 2.0}), 0.5).sample(100, 1);
  const auto out = forward_perturb(x0, s, 0, 3);
  EXPECT_EQ(out.batch.points, x0);
  EXPECT_EQ(out.noise.rows(), x0.rows());
  EXPECT_EQ(out.batch.reverse_step, 1u);
  EXPECT_EQ(out.batch.source, SampleSource::target);
}

TEST(ForwardPerturb, MomentsMatchKernel) {
  const auto& s = schedule();
  const std::size_t k = 120;
  const auto c = transition_coeffs(s, k);
  const GaussianMixture gm({0.3, 0.7}, {vec({-2.0, 1.0}), vec({1.0, 0.0})}, {vec({0.2, 0.5}), vec({0.4, 0.3})});
  const Matrix x0 = gm.sample(100000, 2);
  const auto out = forward_perturb(x0, s, k, 4);
  const Matrix& xk = out.batch.points;
  const Eigen::RowVectorXd mean = xk.colwise().mean();
  const Eigen::RowVectorXd expect = c.a * x0.colwise().mean();
  const Eigen::MatrixXd cov = covariance(xk);
  const Eigen::MatrixXd expect_cov = c.a * c.a * covariance(x0) + c.b * c.b * Eigen::MatrixXd::Identity(2, 2);
  for (int j = 0; j < 2; ++j) {
    const double se = std::sqrt(cov(j, j) / static_cast<double>(xk.rows()));
    EXPECT_NEAR(mean[j], expect[j], 3.0 * se);
    EXPECT_NEAR(cov(j, j), expect_cov(j, j), 0.05 * expect_cov(j, j));
  }
  EXPECT_NEAR(cov(0, 1), expect_cov(0, 1), 0.05 * std::sqrt(expect_cov(0, 0) * expect_cov(1, 1)));
}

TEST(AncestralStep, ZeroBetaLeavesPointsUnchanged) {
  const auto s = NoiseSchedule::from_betas({0.0, 0.0});
  const auto gm = GaussianMixture::isotropic(Vector::Zero(2), 1.0);
  const auto m = exact_score(gm, s);
  const Matrix x = gm.sample(50, 1);
  EXPECT_EQ(ancestral_step(m, s, x, 0, 9), x);
  EXPECT_EQ(ancestral_step(m, s, x, 1, 9), x);
}

TEST(AncestralStep, TerminalCovarianceOfGaussianTarget) {
  const auto& s = schedule();
  const GaussianMixture gm({1.0}, {vec({1.0, -0.5})}, {vec({0.3, 0.8})});
  const auto m = exact_score(gm, s);
  const Matrix x = generate(m, s, 10000, 21);
  const Eigen::MatrixXd cov = covariance(x);
  EXPECT_NEAR(cov(0, 0), 0.3, 0.1 * 0.3);
  EXPECT_NEAR(cov(1, 1), 0.8, 0.1 * 0.8);
  EXPECT_NEAR(cov(0, 1), 0.0, 0.1 * std::sqrt(0.3 * 0.8));
}

TEST(AncestralStep, SeedDeterminism) {
  const auto& s = schedule();
  const auto gm = GaussianMixture::isotropic(Vector::Zero(2), 0.5);
  const auto m = exact_score(gm, s);
  EXPECT_EQ(generate(m, s, 300, 5), generate(m, s, 300, 5));
  EXPECT_NE(generate(m, s, 300, 5), generate(m, s, 300, 6));
  // A chain's path does not depend on how many chains run beside it.
  EXPECT_EQ(Matrix(generate(m, s, 300, 5).topRows(10)), generate(m, s, 10, 5));
}

TEST(SampleGenerated, PriorSnapshot) {
  const auto& s = schedule();
  const auto m = exact_score(GaussianMixture::isotropic(Vector::Zero(2), 0.5), s);
  const auto snaps = sample_generated(m, s, 100, 8, {0});
  ASSERT_EQ(snaps.size(), 1u);
  const auto& b = snaps.at(0);
  EXPECT_EQ(b.reverse_step, 0u);
  EXPECT_EQ(b.source, SampleSource::generated);
  for (int r = 0; r < 100; ++r) {
    auto rng = CounterRng::stream(8, Stream::prior, static_cast<std::uint64_t>(r));
    for (int j = 0; j < 2; ++j) EXPECT_EQ(b.points(r, j), rng.normal());
  }
}

TEST(SampleGenerated, ShapesAndIndices) {
  const auto& s = schedule();
  const auto m = exact_score(GaussianMixture::isotropic(Vector::Zero(3), 0.5), s);
  const std::set<std::size_t> want{0, 5, 100, 199, 200};
  const auto snaps = sample_generated(m, s, 64, 2, want);
  ASSERT_EQ(snaps.size(), want.size());
  for (auto t : want) {
    ASSERT_TRUE(snaps.count(t));
    EXPECT_EQ(snaps.at(t).points.rows(), 64);
    EXPECT_EQ(snaps.at(t).points.cols(), 3);
    EXPECT_EQ(snaps.at(t).reverse_step, t);
  }
  EXPECT_EQ(snaps.at(200).points, generate(m, s, 64, 2));
  EXPECT_THROW(sample_generated(m, s, 64, 2, {}), InvalidArgument);
  EXPECT_THROW(sample_generated(m, s, 64, 2, {201}), InvalidArgument);
  EXPECT_THROW(sample_generated(m, s, 0, 2, {1}), InvalidArgument);
}

TEST(SampleGenerated, SnapshotsTrackTargetMarginals) {
  const auto& s = schedule();
  const GaussianMixture gm({0.5, 0.5}, {vec({-1.5, 0.0}), vec({1.5, 0.0})}, {vec({0.25, 0.25}), vec({0.25, 0.25})});
  const auto m = exact_score(gm, s);
  const std::size_t t = 150;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t n : {500u, 2000u, 5000u}) {
    const Matrix gen = sample_generated(m, s, n, 31, {t}).at(t).points;
    const Matrix exact = draw_marginal(gm, s, t, n, 32);
    const double S = sinkhorn_w2(gen, exact).divergence;
    EXPECT_LT(S, previous) << "n=" << n;
    previous = S;
    if (n == 5000) EXPECT_LE(S, 0.05);
  }
}

TEST(SampleGenerated, NonFiniteScoreIsReported) {
  const auto& s = schedule();
  const auto bad = affine_score(std::vector<Vector>(200, Vector::Constant(2, std::nan(""))),
                                std::vector<Vector>(200, Vector::Zero(2)));
  EXPECT_THROW(generate(bad, s, 10, 1), NumericalError);
}
