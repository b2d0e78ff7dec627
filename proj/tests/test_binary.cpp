#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace hetfx;

namespace {

// Variance of T = 2 Σ (observed treated - control) over the 2^n equally
// likely assignments within pairs, for one fixed completion.
double assignment_variance(const std::vector<BinaryPair>& pairs, std::size_t code) {
  const std::size_t n = pairs.size();
  double m1 = 0, m2 = 0;
  for (std::size_t z = 0; z < (std::size_t{1} << n); ++z) {
    double t = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int rc_of_treated = code >> (2 * i) & 1;
      const int rt_of_control = code >> (2 * i + 1) & 1;
      t += 2.0 * ((z >> i & 1) ? pairs[i].rt - pairs[i].rc : rt_of_control - rc_of_treated);
    }
    m1 += t;
    m2 += t * t;
  }
  const double k = static_cast<double>(std::size_t{1} << n);
  return m2 / k - (m1 / k) * (m1 / k);
}

BinaryGroupModel repeated_group(long long I) {
  // Per 10 pairs: 3 (1,0), 1 (0,1), 3 (0,0), 3 (1,1).
  std::vector<BinaryPair> p;
  for (long long b = 0; b < I / 10; ++b) {
    for (int k = 0; k < 3; ++k) p.push_back({1, 0});
    p.push_back({0, 1});
    for (int k = 0; k < 3; ++k) p.push_back({0, 0});
    for (int k = 0; k < 3; ++k) p.push_back({1, 1});
  }
  return BinaryGroupModel(p);
}

Assignment binary_data(double p1, double p0, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<std::pair<int, int>> y(n);
  std::vector<int> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = coin(rng);
    std::bernoulli_distribution eff(g[i] ? p1 : p0);
    if (eff(rng)) {
      y[i] = {1, 0};
    } else {
      const int base = coin(rng);
      y[i] = {base, coin(rng)};
    }
  }
  return assign_pairs(testutil::stump(), testutil::binary_set(y, g));
}

}  // namespace

TEST(BinaryEstimate, AverageOfPairDifferences) {
  const auto data = testutil::binary_set({{1, 0}, {0, 0}, {1, 1}, {0, 1}, {1, 0}}, {0, 0, 1, 1, 1});
  const auto a = assign_pairs(testutil::stump(), data);
  const auto e = binary_estimate(a.data);
  EXPECT_DOUBLE_EQ(e.delta_hat, 0.2);
  EXPECT_EQ(e.per_group, (std::vector<double>{0.5, 0.0}));
  EXPECT_EQ(e.group_pairs, (std::vector<std::size_t>{2, 3}));
}

TEST(CompatibleBracket, WorkedExamples) {
  auto [lo, hi] = compatible_bracket({3, 20}, 10);
  EXPECT_EQ(lo.num, 1);
  EXPECT_EQ(hi.num, 2);
  EXPECT_EQ(lo.den, 10);
  std::tie(lo, hi) = compatible_bracket({2, 20}, 10);
  EXPECT_EQ(lo.num, 1);
  EXPECT_EQ(hi.num, 1);
  std::tie(lo, hi) = compatible_bracket({-3, 20}, 10);
  EXPECT_EQ(lo.num, -2);
  EXPECT_EQ(hi.num, -1);
  EXPECT_THROW(compatible_bracket({1, 2}, 0), DataError);
}

TEST(CompatibleBracket, GapIsZeroOrOneUnit) {
  for (long long units : {2LL, 7LL, 10LL, 64LL})
    for (long long num = -40; num <= 40; ++num) {
      auto [lo, hi] = compatible_bracket({num, 37}, units);
      EXPECT_TRUE(hi.num - lo.num == 0 || hi.num - lo.num == 1);
      EXPECT_LE(lo.value(), num / 37.0 + 1e-15);
      EXPECT_GE(hi.value(), num / 37.0 - 1e-15);
    }
}

TEST(CompletionTable, MatchesExhaustiveEnumeration) {
  std::size_t checked = 0;
  EXPECT_EQ(oracle::dp_mismatches(6, checked), 0u);
  EXPECT_GT(checked, 10000u);
}

TEST(CompletionTable, OracleAgreesOnASmallCaseByHand) {
  // One (1, 0) pair: b = 1 gives total 2, b = 0 total 1, b = -1 total 0.
  const auto t = oracle::enumerate_completions({{1, 0}});
  ASSERT_EQ(t.size(), 3u);
  EXPECT_EQ(t.at(0).mq.q, 4);
  EXPECT_EQ(t.at(1).mq.q, 1);
  EXPECT_EQ(t.at(2).mq.q, 0);
}

TEST(CompletionTable, VarianceFormulaMatchesAssignmentEnumeration) {
  for (std::size_t n = 1; n <= 4; ++n)
    for (std::size_t code = 0; code < (std::size_t{1} << (2 * n)); ++code) {
      const auto pairs = oracle::decode_pairs(code, n);
      for (std::size_t c = 0; c < (std::size_t{1} << (2 * n)); ++c) {
        long long q = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const long long a = pairs[i].rt - pairs[i].rc;
          const long long b = static_cast<long long>(c >> (2 * i + 1) & 1) - static_cast<long long>(c >> (2 * i) & 1);
          q += (a - b) * (a - b);
        }
        ASSERT_NEAR(assignment_variance(pairs, c), 4.0 * 0.25 * static_cast<double>(q), 1e-9);
      }
    }
}

TEST(CompletionTable, EveryTotalInRangeIsFeasible) {
  const std::vector<BinaryPair> pairs{{1, 0}, {0, 0}, {1, 1}, {0, 1}};
  const CompletionTable t(pairs);
  EXPECT_EQ(t.min_total(), -4);
  EXPECT_EQ(t.max_total(), 4);
  for (long long s = -4; s <= 4; ++s) EXPECT_NO_THROW(t.max_variance(s));
  EXPECT_THROW(t.max_variance(5), DataError);
  EXPECT_THROW(t.lexicographic(-5), DataError);
}

TEST(CompletionTable, NullTotalDominatesSharpNull) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<BinaryPair> p(12);
    long long discordant = 0;
    for (auto& x : p) {
      x = {bit(rng), bit(rng)};
      discordant += x.rt != x.rc;
    }
    EXPECT_GE(CompletionTable(p).max_variance(0).q, 4 * discordant);
  }
}

TEST(WorstCaseVariance, UsesRuleByGamma) {
  const std::vector<BinaryPair> pairs{{1, 0}, {0, 0}, {1, 1}};
  const CompletionTable t(pairs);
  const auto one = worst_case_variance(pairs, {0, 6}, SensitivitySpec(1.0));
  EXPECT_EQ(one.sums.q, t.max_variance(0).q);
  EXPECT_DOUBLE_EQ(one.variance, static_cast<double>(t.max_variance(0).q));
  const auto two = worst_case_variance(pairs, {0, 6}, SensitivitySpec(2.0));
  EXPECT_EQ(two.sums.w, t.lexicographic(0).w);
  EXPECT_NEAR(two.mu_upper - two.mu_lower, 2.0 / 3.0 * static_cast<double>(two.sums.w), 1e-12);
  EXPECT_THROW(worst_case_variance(pairs, {1, 7}, SensitivitySpec(1.0)), ConfigError);
  EXPECT_THROW(worst_case_variance(pairs, {5, 6}, SensitivitySpec(1.0)), DataError);
}

TEST(BinaryBracket, PValueGapShrinksWithGroupSize) {
  double prev = 1.0;
  for (long long I : {10LL, 100LL, 1000LL}) {
    const auto g = repeated_group(I);
    auto [lo, hi] = compatible_bracket({1, 7}, g.units);
    ASSERT_EQ(hi.num - lo.num, 1);
    auto p = [&](long long total) {
      return 2.0 * (1.0 - norm_cdf(std::abs(pooled_binary_deviate(g, total, SensitivitySpec(1.0)))));
    };
    const double gap = std::abs(p(lo.num) - p(hi.num));
    EXPECT_LT(gap, prev) << "I = " << I;
    prev = gap;
  }
  EXPECT_LT(prev, 0.01);
}

TEST(BinaryCi, ContainsTheEstimateAndWidensWithGamma) {
  const auto g = repeated_group(200);
  const auto [a, b] = binary_ci(g, 0.01, SensitivitySpec(1.0));
  EXPECT_LE(a, g.statistic);
  EXPECT_GE(b, g.statistic);
  const auto [c, d] = binary_ci(g, 0.01, SensitivitySpec(1.3));
  EXPECT_LE(c, a);
  EXPECT_GE(d, b);
}

TEST(BinaryJoint, DetectsHeterogeneityAndKeepsLevelUnderConstantEffect) {
  const auto C = build_conversion_matrix(testutil::stump());
  const auto het = binary_data(0.6, 0.0, 600, 1);
  const auto r = binary_joint_test(BinaryGroups::from(het), C, 0.01, 0.04, SensitivitySpec(1.0));
  EXPECT_TRUE(r.reject);
  const auto flat = binary_data(0.3, 0.3, 600, 2);
  const auto s = binary_joint_test(BinaryGroups::from(flat), C, 0.01, 0.04, SensitivitySpec(1.0));
  EXPECT_FALSE(s.reject);
}

TEST(BinaryJoint, DeviatesAreMonotoneInGamma) {
  const auto C = build_conversion_matrix(testutil::stump());
  const auto data = BinaryGroups::from(binary_data(0.5, 0.05, 500, 3));
  double prev = std::numeric_limits<double>::infinity();
  for (double g : {1.0, 1.1, 1.2, 1.4, 1.8}) {
    const auto r = binary_joint_test(data, C, 0.0, 0.05, SensitivitySpec(g));
    EXPECT_LE(r.d_min, prev + 1e-9) << "gamma " << g;
    prev = r.d_min;
  }
  const auto rep = binary_sensitivity_sweep(data, C, {1.0, 1.2, 1.5, 2.0}, 0.04, 0.01);
  EXPECT_TRUE(rep.diagnostics.empty());
  ASSERT_TRUE(rep.breaking_gamma.has_value());
}

TEST(BinaryJoint, GroupMismatchIsAConfigError) {
  const auto data = BinaryGroups::from(binary_data(0.5, 0.0, 100, 4));
  EXPECT_THROW(binary_joint_test(data, build_conversion_matrix(testutil::three_leaf()), 0.01, 0.04, SensitivitySpec(1.0)),
               ConfigError);
}
