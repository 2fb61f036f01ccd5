#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/special_functions/erf.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <gtest/gtest.h>

#include "pfvb/truncnorm.hpp"
#include "support/quad.hpp"

using pfvb::Side;
using pfvb::TruncNormParams;

namespace {

using big = boost::multiprecision::cpp_bin_float_50;

big mills_oracle(double t) {
  const big x(t);
  const big pdf = exp(-x * x / 2) / sqrt(2 * boost::math::constants::pi<big>());
  const big cdf = boost::math::erfc(-x / sqrt(big(2))) / 2;
  return pdf / cdf;
}

double rel_err(long double got, const big& want) {
  return static_cast<double>(abs((big(got) - want) / want));
}

}  // namespace

TEST(MillsRatio, AtZero) {
  EXPECT_NEAR(pfvb::mills_ratio(0.0), std::sqrt(2.0 / std::numbers::pi), 1e-15);
}

TEST(MillsRatio, RightTailStaysPositive) {
  const double v = pfvb::mills_ratio(37.0);
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1e-290);
  EXPECT_LT(rel_err(v, mills_oracle(37.0)), 1e-12);
}

TEST(MillsRatio, LeftTail) {
  const double v = pfvb::mills_ratio(-30.0);
  EXPECT_NEAR(v, 30.0333, 1e-4);
  EXPECT_LT(rel_err(v, mills_oracle(-30.0)), 1e-12);
}

TEST(MillsRatio, DoubleMatchesOracleWhereRepresentable) {
  for (double t = -40.0; t <= 37.5; t += 0.01) {
    ASSERT_LT(rel_err(pfvb::mills_ratio(t), mills_oracle(t)), 1e-12) << "t=" << t;
  }
}

TEST(MillsRatio, LongDoubleMatchesOracleOnFullRange) {
  for (double t = -40.0; t <= 40.0; t += 0.01) {
    ASSERT_LT(rel_err(pfvb::mills_ratio<long double>(t), mills_oracle(t)), 1e-12) << "t=" << t;
  }
}

TEST(MillsRatio, StrictlyDecreasing) {
  long double prev = pfvb::mills_ratio<long double>(-40.0L);
  for (int k = 1; k <= 80000; ++k) {
    const long double t = -40.0L + k * 0.001L;
    const long double cur = pfvb::mills_ratio<long double>(t);
    ASSERT_LT(cur, prev) << "t=" << static_cast<double>(t);
    prev = cur;
  }
}

TEST(LogNormCdf, MatchesOracle) {
  for (double x : {-40.0, -20.0, -6.0, -5.0, -1.0, 0.0, 3.0, 6.0, 10.0}) {
    const big cdf = boost::math::erfc(-big(x) / sqrt(big(2))) / 2;
    const double want = static_cast<double>(log(cdf));
    EXPECT_NEAR(pfvb::log_norm_cdf(x), want, 1e-13 * std::max(1.0, std::abs(want))) << x;
  }
}

TEST(TnMean, HalfNormal) {
  EXPECT_NEAR(pfvb::tn_mean({0.0, 1.0, Side::Positive}), 0.7978845608, 1e-10);
  EXPECT_NEAR(pfvb::tn_mean({0.0, 1.0, Side::Negative}), -0.7978845608, 1e-10);
}

TEST(TnMean, ShiftedLocation) {
  const double m = pfvb::tn_mean({2.0, 1.0, Side::Positive});
  EXPECT_NEAR(m, 2.05524, 1e-5);
  EXPECT_NEAR(m, static_cast<double>(quad::tn_moments(2.0, 1.0, Side::Positive).mean), 1e-10);
}

TEST(TnVar, HalfNormalAndScale) {
  EXPECT_NEAR(pfvb::tn_var({0.0, 1.0, Side::Positive}), 1.0 - 2.0 / std::numbers::pi, 1e-12);
  EXPECT_NEAR(pfvb::tn_var({0.0, 2.0, Side::Positive}), 4.0 * (1.0 - 2.0 / std::numbers::pi), 1e-12);
}

TEST(TnVar, FarSide) {
  const double v = pfvb::tn_var({-3.0, 1.0, Side::Positive});
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 0.2);
  EXPECT_NEAR(v, static_cast<double>(quad::tn_moments(-3.0, 1.0, Side::Positive).var), 1e-10);
}

TEST(TnMoments, QuadratureGrid) {
  for (double sigma : {0.5, 1.0, 5.0}) {
    for (Side side : {Side::Positive, Side::Negative}) {
      for (double r = -10.0; r <= 10.0 + 1e-9; r += 0.25) {
        const TruncNormParams prm{r * sigma, sigma, side};
        const auto q = quad::tn_moments(prm.mu, prm.sigma, side);
        ASSERT_NEAR(pfvb::tn_mean(prm), static_cast<double>(q.mean), 1e-10) << r << " " << sigma;
        ASSERT_NEAR(pfvb::tn_var(prm), static_cast<double>(q.var), 1e-10) << r << " " << sigma;
      }
    }
  }
}

TEST(TnMoments, SignAndVarianceBounds) {
  for (double sigma : {0.5, 1.0, 5.0}) {
    for (double r = -10.0; r <= 10.0; r += 0.1) {
      const TruncNormParams pos{r * sigma, sigma, Side::Positive};
      const TruncNormParams neg{r * sigma, sigma, Side::Negative};
      EXPECT_GT(pfvb::tn_mean(pos), 0.0);
      EXPECT_LT(pfvb::tn_mean(neg), 0.0);
      const double v = pfvb::tn_var(pos);
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, sigma * sigma);
      if (r < 5.0) EXPECT_LT(v, sigma * sigma);
    }
  }
}

TEST(TnMoments, VarianceIdentity) {
  for (double sigma : {0.5, 1.0, 5.0}) {
    for (Side side : {Side::Positive, Side::Negative}) {
      for (double r = -10.0; r <= 10.0; r += 0.05) {
        const TruncNormParams prm{r * sigma, sigma, side};
        const double m = pfvb::tn_mean(prm);
        const double v = pfvb::tn_var(prm);
        const double rhs = sigma * sigma - (m - prm.mu) * m;
        ASSERT_NEAR(v, rhs, 1e-12 * v) << r << " " << sigma;
      }
    }
  }
}

TEST(TnSample, RegionMembershipAndMean) {
  for (const TruncNormParams prm : {TruncNormParams{0.0, 1.0, Side::Positive},
                                    TruncNormParams{-8.0, 1.0, Side::Positive},
                                    TruncNormParams{1.5, 2.0, Side::Negative},
                                    TruncNormParams{3.0, 0.5, Side::Positive}}) {
    pfvb::Rng rng(11);
    const int draws = 1000000;
    double sum = 0.0;
    for (int k = 0; k < draws; ++k) {
      const double z = pfvb::tn_sample(prm, rng);
      ASSERT_GT(pfvb::side_sign(prm.side) * z, 0.0);
      sum += z;
    }
    const auto q = quad::tn_moments(prm.mu, prm.sigma, prm.side);
    const double se = std::sqrt(static_cast<double>(q.var) / draws);
    EXPECT_NEAR(sum / draws, static_cast<double>(q.mean), 4.0 * se) << prm.mu << " " << prm.sigma;
  }
}

TEST(TnSample, SeedReplay) {
  pfvb::Rng a(99), b(99);
  for (int k = 0; k < 1000; ++k) {
    ASSERT_EQ(pfvb::tn_sample({-2.0, 1.0, Side::Positive}, a), pfvb::tn_sample({-2.0, 1.0, Side::Positive}, b));
  }
}

TEST(Rng, SplitStreamsAreReproducibleAndDistinct) {
  const pfvb::Rng root(5);
  pfvb::Rng a = root.split(3), b = root.split(3), c = root.split(4);
  const double x = a.normal();
  EXPECT_EQ(x, b.normal());
  EXPECT_NE(x, c.normal());
  for (int k = 0; k < 100000; ++k) {
    const double u = a.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}
