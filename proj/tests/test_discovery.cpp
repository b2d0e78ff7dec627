#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "helpers.hpp"

using namespace hetfx;

namespace {

MatchedPairSet signal_data(double effect_x1, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  auto x = testutil::random_binary_x(n, 4, rng);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = effect_x1 * x[i][0] + z(rng);
  return testutil::pairs_with(x, d);
}

MatchedPairSet reversed(const MatchedPairSet& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.rbegin(), idx.rend(), 0);
  return data.subset(idx);
}

}  // namespace

TEST(Split, FloorRoundingOfTheDiscoveryShare) {
  EXPECT_EQ(discovery_count(110091, 0.25), 27522u);
  EXPECT_EQ(110091 - discovery_count(110091, 0.25), 82569u);
  EXPECT_EQ(discovery_count(4000, 0.1), 400u);
  EXPECT_EQ(discovery_count(3, 0.5), 1u);
}

TEST(Split, DisjointCompleteAndSized) {
  const auto data = signal_data(0.0, 101, 1);
  const auto plan = split_sample(data, 0.25, 9);
  EXPECT_EQ(plan.discovery_index.size(), 25u);
  EXPECT_EQ(plan.confirmation_index.size(), 76u);
  std::vector<std::size_t> all = plan.discovery_index;
  all.insert(all.end(), plan.confirmation_index.begin(), plan.confirmation_index.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(Split, DeterministicAndRowOrderInvariant) {
  const auto data = signal_data(0.0, 300, 2);
  const auto a = split_sample(data, 0.5, 17);
  const auto b = split_sample(data, 0.5, 17);
  const auto c = split_sample(reversed(data), 0.5, 17);
  EXPECT_EQ(a.discovery_ids, b.discovery_ids);
  auto sorted = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end(), natural_less);
    return v;
  };
  EXPECT_EQ(sorted(a.discovery_ids), sorted(c.discovery_ids));
  EXPECT_NE(a.discovery_ids, split_sample(data, 0.5, 18).discovery_ids);
}

TEST(Split, RejectsDegenerateRatios) {
  const auto data = signal_data(0.0, 10, 3);
  EXPECT_THROW(split_sample(data, 0.0, 1), ConfigError);
  EXPECT_THROW(split_sample(data, 1.0, 1), ConfigError);
  EXPECT_THROW(split_sample(data, 0.05, 1), ConfigError);
}

TEST(NaturalLess, NumbersBeforeText) {
  EXPECT_TRUE(natural_less("2", "10"));
  EXPECT_FALSE(natural_less("10", "2"));
  EXPECT_TRUE(natural_less("a", "b"));
  EXPECT_TRUE(natural_less("-3", "1"));
}

TEST(Growth, FindsStrongModifier) {
  const auto data = signal_data(1.5, 800, 4);
  for (auto m : {GrowthMethod::cart, GrowthMethod::ct}) {
    const auto g = grow_tree(data, GrowthConfig::defaults_for(m));
    EXPECT_TRUE(g.tree.covariates_used().count("x1")) << to_string(m);
    EXPECT_GE(g.tree.leaf_count(), 2u);
    EXPECT_FALSE(g.cv_table.empty());
  }
}

TEST(Growth, NoiseMostlyStaysAtTheRoot) {
  int split = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto g = grow_tree(signal_data(0.0, 400, 100 + s), GrowthConfig::defaults_for(GrowthMethod::cart));
    split += g.tree.leaf_count() > 1;
  }
  EXPECT_LE(split, 4);
}

TEST(Growth, RespectsMinLeafAndDepth) {
  const auto data = signal_data(2.0, 600, 5);
  auto cfg = GrowthConfig::defaults_for(GrowthMethod::cart);
  cfg.min_leaf_pairs = 60;
  cfg.prune = false;
  cfg.max_depth = 2;
  const auto g = grow_tree(data, cfg);
  const auto a = assign_pairs(g.tree, data);
  for (auto n : a.leaf_sizes) EXPECT_GE(n, 60u);
  for (int id : g.tree.terminal_ids()) EXPECT_LE(g.tree.node(id).depth, 2);
}

TEST(Growth, DeterministicAndRowOrderInvariant) {
  const auto data = signal_data(0.8, 500, 6);
  for (auto m : {GrowthMethod::cart, GrowthMethod::ct}) {
    const auto cfg = GrowthConfig::defaults_for(m);
    const auto a = grow_tree(data, cfg);
    const auto b = grow_tree(data, cfg);
    const auto c = grow_tree(reversed(data), cfg);
    EXPECT_EQ(a.tree.to_json().dump(), b.tree.to_json().dump());
    EXPECT_EQ(a.tree.to_json().dump(), c.tree.to_json().dump());
  }
}

TEST(Growth, OnlyPairConstantCovariatesAreUsed) {
  Schema s;
  s.covariates = {{"x1", CovariateKind::binary, {}}, {"age", CovariateKind::numeric, {}}};
  std::vector<MatchedPair> pairs;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  for (int i = 0; i < 300; ++i) {
    const double x1 = i % 2;
    const double age = 70 + i % 13;
    pairs.push_back({std::to_string(i + 1), {"t" + std::to_string(i), true, 3 * (age > 75) + z(rng), {x1, age}},
                     {"c" + std::to_string(i), false, 0.0, {x1, age + 1}}});
  }
  const MatchedPairSet data(s, pairs);
  EXPECT_EQ(pair_constant_covariates(data), (std::vector<std::string>{"x1"}));
  const auto g = grow_tree(data, GrowthConfig::defaults_for(GrowthMethod::cart));
  EXPECT_EQ(g.covariates_considered, (std::vector<std::string>{"x1"}));
  EXPECT_FALSE(g.tree.covariates_used().count("age"));
}

TEST(GrowthConfig, JsonRoundTripAndValidation) {
  auto c = GrowthConfig::defaults_for(GrowthMethod::ct);
  c.min_leaf_pairs = 40;
  c.complexity_grid = {0.0, 0.01};
  c.covariates = {"x2"};
  const auto back = GrowthConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_THROW(GrowthConfig::from_json({{"method", "forest"}}), ConfigError);
  EXPECT_THROW(GrowthConfig::from_json({{"cv_folds", 1}}), ConfigError);
  EXPECT_THROW(GrowthConfig::from_json({{"complexity_grid", {0.2, 0.1}}}), ConfigError);
}

TEST(GrowthConfig, PruningDefaultsDependOnMethod) {
  EXPECT_DOUBLE_EQ(GrowthConfig::defaults_for(GrowthMethod::cart).se_rule, 0.05);
  EXPECT_DOUBLE_EQ(GrowthConfig::defaults_for(GrowthMethod::ct).se_rule, 0.0);
  EXPECT_DOUBLE_EQ(GrowthConfig::from_json({{"method", "ct"}}).se_rule, 0.0);
  EXPECT_DOUBLE_EQ(GrowthConfig::from_json(nlohmann::json::object()).se_rule, 0.05);
  EXPECT_DOUBLE_EQ(GrowthConfig::from_json({{"method", "cart"}, {"se_rule", 1.0}}).se_rule, 1.0);
}
