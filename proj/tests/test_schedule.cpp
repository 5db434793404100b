#include <gtest/gtest.h>

#include <cmath>

#include "siem/schedule.hpp"

using namespace siem;

namespace {

// Extended-precision product of (1 - beta) with the ramp rebuilt from its endpoints.
long double alpha_bar_oracle(std::size_t K, double b0, double b1, std::size_t k) {
  long double log_sum = 0.0L;
  for (std::size_t i = 0; i <= k; ++i) {
    const long double beta = b0 + (static_cast<long double>(b1) - b0) * i / (K - 1);
    log_sum += std::log1p(-beta);
  }
  return std::exp(log_sum);
}

}  // namespace

TEST(LinearSchedule, Endpoints) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  ASSERT_EQ(s.steps(), 1000u);
  EXPECT_DOUBLE_EQ(s.betas()[0], 1e-4);
  EXPECT_DOUBLE_EQ(s.betas()[999], 0.02);
}

TEST(LinearSchedule, SingleStep) {
  const auto s = linear_beta_schedule(1, 0.5, 0.5);
  ASSERT_EQ(s.steps(), 1u);
  EXPECT_EQ(s.betas()[0], 0.5);
  EXPECT_EQ(s.alpha_bar()[0], 0.5);
}

TEST(LinearSchedule, AlphaBarMatchesProductOracle) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  const long double oracle = alpha_bar_oracle(1000, 1e-4, 0.02, 999);
  EXPECT_NEAR(static_cast<double>(oracle), 4.0358297653756833e-05, 1e-18);
  EXPECT_NEAR(s.alpha_bar()[999], static_cast<double>(oracle), 1e-15 * static_cast<double>(oracle));
}

TEST(LinearSchedule, RejectsBadArguments) {
  EXPECT_THROW(linear_beta_schedule(0, 1e-4, 0.02), InvalidArgument);
  EXPECT_THROW(linear_beta_schedule(10, 0.0, 0.02), InvalidArgument);
  EXPECT_THROW(linear_beta_schedule(10, 0.03, 0.02), InvalidArgument);
  EXPECT_THROW(linear_beta_schedule(10, 1e-4, 1.0), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::from_betas({}), InvalidArgument);
  EXPECT_THROW(NoiseSchedule::from_betas({0.1, -0.1}), InvalidArgument);
}

TEST(TransitionCoeffs, IdentityAtZeroNoise) {
  const auto s = NoiseSchedule::from_betas({0.0});
  const auto c = transition_coeffs(s, 0);
  EXPECT_EQ(c.a, 1.0);
  EXPECT_EQ(c.b, 0.0);
}

TEST(TransitionCoeffs, QuarterAlphaBar) {
  const auto s = NoiseSchedule::from_betas({0.75});
  const auto c = transition_coeffs(s, 0);
  EXPECT_DOUBLE_EQ(c.a, 0.5);
  EXPECT_DOUBLE_EQ(c.b, std::sqrt(0.75));
}

TEST(TransitionCoeffs, LastStepMatchesOracle) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  const auto c = transition_coeffs(s, 999);
  EXPECT_NEAR(c.a * c.a + c.b * c.b, 1.0, 1e-12);
  EXPECT_NEAR(c.a, std::sqrt(static_cast<double>(alpha_bar_oracle(1000, 1e-4, 0.02, 999))), 1e-14);
}

TEST(TransitionCoeffs, VariancePreservedEverywhere) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  for (std::size_t k = 0; k < s.steps(); ++k) {
    const auto c = transition_coeffs(s, k);
    EXPECT_NEAR(c.a * c.a + c.b * c.b, 1.0, 1e-12) << "k=" << k;
    if (k + 1 < s.steps()) EXPECT_LT(s.alpha_bar()[k + 1], s.alpha_bar()[k]);
  }
  EXPECT_THROW(transition_coeffs(s, 1000), InvalidArgument);
}

TEST(ReverseCoeffs, LastForwardStep) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  const auto r = reverse_coeffs(s, 0);
  EXPECT_DOUBLE_EQ(r.f_bar, -0.01);
  EXPECT_DOUBLE_EQ(r.g_bar, std::sqrt(0.02));
}

TEST(ReverseCoeffs, ZeroNoiseLimit) {
  const auto s = NoiseSchedule::from_betas({0.0, 0.0});
  for (std::size_t t = 0; t < 2; ++t) {
    const auto r = reverse_coeffs(s, t);
    EXPECT_EQ(r.f_bar, 0.0);
    EXPECT_EQ(r.g_bar, 0.0);
  }
}

TEST(ReverseCoeffs, IndexRoundTrip) {
  const auto s = linear_beta_schedule(1000, 1e-4, 0.02);
  EXPECT_EQ(s.forward_index(0), 999u);
  EXPECT_EQ(s.forward_index(999), 0u);
  for (std::size_t k = 0; k < s.steps(); ++k) {
    EXPECT_EQ(s.forward_index(s.reverse_index(k)), k);
    EXPECT_EQ(s.reverse_index(s.forward_index(k)), k);
  }
  EXPECT_THROW(s.forward_index(1000), InvalidArgument);
  EXPECT_THROW(s.reverse_index(1000), InvalidArgument);
}

TEST(Schedule, DtIsOneOverK) {
  EXPECT_DOUBLE_EQ(linear_beta_schedule(200, 1e-4, 0.02).dt(), 1.0 / 200.0);
}
