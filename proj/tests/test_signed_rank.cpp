#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"

using namespace hetfx;

namespace {

// Brute force over all 2^n sign patterns, each sign positive with
// probability p independently of the others.
std::pair<double, double> enumerate_moments(const std::vector<double>& q, double p) {
  const std::size_t n = q.size();
  double m1 = 0, m2 = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double t = 0, w = 1;
    for (std::size_t i = 0; i < n; ++i) {
      const bool pos = mask >> i & 1;
      w *= pos ? p : 1 - p;
      if (pos) t += q[i];
    }
    m1 += w * t;
    m2 += w * t * t;
  }
  return {m1, m2 - m1 * m1};
}

}  // namespace

TEST(SignedRank, SmallExampleAtGammaOne) {
  const std::vector<double> d{1, 2, 3};
  const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(1.0));
  EXPECT_DOUBLE_EQ(m.statistic, 6.0);
  EXPECT_DOUBLE_EQ(m.mu_upper, 3.0);
  EXPECT_DOUBLE_EQ(m.var_upper, 3.5);
  EXPECT_EQ(m.used_pairs, 3u);
}

TEST(SignedRank, SmallExampleAtGammaTwoMatchesEnumeration) {
  const std::vector<double> d{1, 2, 3};
  const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(2.0));
  EXPECT_NEAR(m.mu_upper, 4.0, 1e-12);
  EXPECT_NEAR(m.var_upper, 28.0 / 9.0, 1e-12);
  const auto [e1, v1] = enumerate_moments({1, 2, 3}, 2.0 / 3.0);
  EXPECT_NEAR(m.mu_upper, e1, 1e-12);
  EXPECT_NEAR(m.var_upper, v1, 1e-12);
  const auto [e0, v0] = enumerate_moments({1, 2, 3}, 1.0 / 3.0);
  EXPECT_NEAR(m.mu_lower, e0, 1e-12);
  EXPECT_NEAR(m.var_lower, v0, 1e-12);
}

TEST(SignedRank, ClassicalMomentsWithoutTies) {
  for (std::size_t n : {1u, 5u, 17u, 40u}) {
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = (i % 2 ? -1.0 : 1.0) * static_cast<double>(i + 1) * 0.7;
    const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(1.0));
    const double N = static_cast<double>(n);
    EXPECT_NEAR(m.mu_upper, N * (N + 1) / 4, 1e-9);
    EXPECT_NEAR(m.var_upper, N * (N + 1) * (2 * N + 1) / 24, 1e-9);
  }
}

TEST(SignedRank, TiesGetAverageRanksAndZerosAreDropped) {
  const std::vector<double> d{0.0, 2.0, -2.0, 5.0};
  const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(1.0), true);
  EXPECT_EQ(m.used_pairs, 3u);
  EXPECT_EQ(m.scores, (std::vector<double>{1.5, 1.5, 3.0}));
  EXPECT_DOUBLE_EQ(m.statistic, 4.5);
}

TEST(SignedRank, AllZeroIsDegenerate) {
  const std::vector<double> d{1.0, 1.0};
  EXPECT_TRUE(signed_rank_moments(d, 1.0, SensitivitySpec(1.0)).degenerate);
}

TEST(SignedRank, EnumerationOracleWithTies) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> v(-3, 3);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> d(8);
    for (auto& x : d) x = v(rng);
    for (double g : {1.0, 1.5, 3.0}) {
      const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(g), true);
      if (m.degenerate) continue;
      const auto [e, var] = enumerate_moments(m.scores, g / (1 + g));
      EXPECT_NEAR(m.mu_upper, e, 1e-9);
      EXPECT_NEAR(m.var_upper, var, 1e-9);
    }
  }
}

TEST(SignedRank, UpperMeanGrowsWithGamma) {
  const std::vector<double> d{0.3, -1.2, 2.2, 0.9, -0.1};
  double prev = -1;
  for (double g = 1.0; g < 6.0; g += 0.25) {
    const auto m = signed_rank_moments(d, 0.0, SensitivitySpec(g));
    EXPECT_GT(m.mu_upper, prev);
    EXPECT_LE(m.mu_lower, m.mu_upper);
    prev = m.mu_upper;
  }
}

TEST(SignedRank, ScaleEquivariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::vector<double> d(30), scaled(30);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = z(rng);
    scaled[i] = 3.7 * d[i];
  }
  const auto a = signed_rank_moments(d, 0.2, SensitivitySpec(1.4));
  const auto b = signed_rank_moments(scaled, 0.2 * 3.7, SensitivitySpec(1.4));
  EXPECT_DOUBLE_EQ(a.statistic, b.statistic);
  EXPECT_DOUBLE_EQ(a.var_upper, b.var_upper);
}

TEST(SignedRank, GammaBelowOneIsRejected) {
  EXPECT_THROW(SensitivitySpec(0.9), ConfigError);
}

TEST(SortedDifferences, MatchesDirectComputation) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> v(-6, 6);
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<double> d(25);
    for (auto& x : d) x = 0.5 * v(rng);
    const SortedDifferences sd(d);
    for (double tau : {-1.0, -0.5, 0.0, 0.25, 0.5, 2.0, 4.0}) {
      for (double g : {1.0, 2.5}) {
        const auto a = sd.moments(tau, SensitivitySpec(g));
        const auto b = signed_rank_moments(d, tau, SensitivitySpec(g));
        EXPECT_EQ(a.degenerate, b.degenerate);
        EXPECT_EQ(a.used_pairs, b.used_pairs);
        EXPECT_NEAR(a.statistic, b.statistic, 1e-9);
        EXPECT_NEAR(a.mu_upper, b.mu_upper, 1e-9);
        EXPECT_NEAR(a.var_upper, b.var_upper, 1e-9);
        EXPECT_NEAR(a.var_lower, b.var_lower, 1e-9);
      }
    }
  }
}
