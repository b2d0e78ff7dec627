#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace hetfx;

TEST(ConversionMatrix, ThreeLeafTree) {
  const auto C = build_conversion_matrix(testutil::three_leaf());
  const std::vector<std::vector<int>> expected{{0, 1, 1}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(C.entries, expected);
  EXPECT_EQ(C.row_labels, (std::vector<int>{2, 1, 3, 4}));
  EXPECT_EQ(C.col_labels, (std::vector<int>{1, 3, 4}));
}

TEST(ConversionMatrix, ShapeIsTwoGMinusTwoByG) {
  EffectTree t;
  auto [a, b] = t.add_split(0, {"x1", Split::Kind::threshold, 0.5, {}});
  auto [c, d] = t.add_split(a, {"x2", Split::Kind::threshold, 0.5, {}});
  t.add_split(b, {"x3", Split::Kind::threshold, 0.5, {}});
  t.add_split(d, {"x4", Split::Kind::threshold, 0.5, {}});
  (void)c;
  const auto C = build_conversion_matrix(t);
  const std::size_t G = t.leaf_count();
  EXPECT_EQ(G, 5u);
  EXPECT_EQ(C.rows(), 2 * G - 2);
  EXPECT_EQ(C.cols(), G);
  // Leaf rows are the identity.
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t k = 0; k < G; ++k) EXPECT_EQ(C.entries[G - 2 + g][k], g == k ? 1 : 0);
}

TEST(ConversionMatrix, ApplySumsDescendantLeaves) {
  const auto C = build_conversion_matrix(testutil::three_leaf());
  const auto s = C.apply(std::vector<double>{1.5, 2.0, 4.0});
  EXPECT_EQ(s, (std::vector<double>{6.0, 1.5, 2.0, 4.0}));
}

TEST(ConversionMatrix, RootOnlyTreeIsRejected) {
  EXPECT_THROW(build_conversion_matrix(EffectTree{}), ConfigError);
}

TEST(EffectTree, JsonRoundTripKeepsStructure) {
  EffectTree t;
  auto [l, r] = t.add_split(0, {"age", Split::Kind::category, 0.0, {0, 2}});
  t.add_split(l, {"x1", Split::Kind::threshold, 0.25, {}});
  (void)r;
  const auto back = EffectTree::from_json(t.to_json());
  EXPECT_EQ(back.to_json().dump(), t.to_json().dump());
  EXPECT_EQ(back.terminal_ids(), t.terminal_ids());
}

TEST(EffectTree, FromJsonRejectsBrokenInput) {
  EXPECT_THROW(EffectTree::from_json(nlohmann::json::object()), ConfigError);
  auto j = testutil::stump().to_json();
  j["nodes"][0]["children"] = {1, 7};
  EXPECT_THROW(EffectTree::from_json(j), std::exception);
}

TEST(EffectTree, RouteAndDescribe) {
  Schema s;
  s.covariates = {{"x1", CovariateKind::binary, {}}, {"x2", CovariateKind::binary, {}}};
  const auto t = testutil::three_leaf();
  EXPECT_EQ(t.route({0, 1}, s), 1);
  EXPECT_EQ(t.route({1, 0}, s), 3);
  EXPECT_EQ(t.route({1, 1}, s), 4);
  EXPECT_EQ(t.describe(4), "x1 > 0.5 & x2 > 0.5");
  EXPECT_EQ(t.describe(0), "all");
}

TEST(EffectTree, CategoricalConditionUsesLevelNames) {
  Schema s;
  s.covariates = {{"age", CovariateKind::categorical, {"65-75", "76-80", "81-85"}}};
  EffectTree t;
  t.add_split(0, {"age", Split::Kind::category, 0.0, {0, 2}});
  EXPECT_EQ(t.describe(1, &s), "age in {65-75,81-85}");
  EXPECT_EQ(t.describe(2, &s), "age not in {65-75,81-85}");
  EXPECT_EQ(t.route({1.0}, s), 2);
}

TEST(EffectTree, DotMarksRejectedNodesSolid) {
  const auto t = testutil::stump();
  EffectTree::DotStyle st;
  st.rejected[1] = true;
  st.rejected[2] = false;
  const auto dot = t.to_dot(st);
  EXPECT_NE(dot.find("n1 [label=\"node 1\", style=solid]"), std::string::npos);
  EXPECT_NE(dot.find("n2 [label=\"node 2\", style=dashed]"), std::string::npos);
}

TEST(AssignPairs, GroupsFollowLeafColumns) {
  const auto data = testutil::pairs_with({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {1, 2, 3, 4});
  const auto a = assign_pairs(testutil::three_leaf(), data);
  EXPECT_EQ(*a.data.group_of_pair(), (std::vector<int>{0, 1, 2, 0}));
  EXPECT_EQ(a.leaf_sizes, (std::vector<std::size_t>{2, 1, 1}));
  EXPECT_TRUE(a.diagnostics.empty());
}

TEST(AssignPairs, EmptyLeafIsReported) {
  const auto data = testutil::pairs_with({{0, 0}, {1, 0}}, {1, 2});
  const auto a = assign_pairs(testutil::three_leaf(), data);
  ASSERT_EQ(a.diagnostics.size(), 1u);
  EXPECT_NE(a.diagnostics[0].find("node 4"), std::string::npos);
}

TEST(AssignPairs, SplitPairIsNotRoutable) {
  Schema s;
  s.covariates = {{"x1", CovariateKind::binary, {}}};
  MatchedPair p{"1", {"t", true, 1.0, {1.0}}, {"c", false, 0.0, {0.0}}};
  const MatchedPairSet data(s, {p});
  EXPECT_THROW(assign_pairs(testutil::stump(), data), DataError);
}

TEST(AssignPairs, UnknownCovariateIsAnError) {
  const auto data = testutil::pairs_with({{0}}, {1});
  EXPECT_THROW(assign_pairs(testutil::stump("missing"), data), DataError);
}

TEST(MatchedPairSet, ValidatesRolesAndBinaryOutcomes) {
  Schema s;
  s.outcome = OutcomeKind::binary;
  MatchedPair bad{"1", {"t", true, 0.5, {}}, {"c", false, 0.0, {}}};
  EXPECT_THROW(MatchedPairSet(s, {bad}), DataError);
  MatchedPair swapped{"1", {"t", false, 1.0, {}}, {"c", false, 0.0, {}}};
  EXPECT_THROW(MatchedPairSet(s, {swapped}), DataError);
}

TEST(MatchedPairSet, SubsetKeepsGroups) {
  const auto data = testutil::pairs_with({{0}, {1}, {0}}, {1, 2, 3}).with_groups({0, 1, 0});
  const auto sub = data.subset({2, 1});
  EXPECT_EQ(sub.pairs()[0].pair_id, "3");
  EXPECT_EQ(*sub.group_of_pair(), (std::vector<int>{0, 1}));
}

TEST(MixSeed, StreamsDiffer) {
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
  EXPECT_EQ(mix_seed(7, 3), mix_seed(7, 3));
}

TEST(Errors, CarryExitCodes) {
  EXPECT_EQ(ConfigError("x").exit_code(), 2);
  EXPECT_EQ(DataError("x").exit_code(), 3);
  EXPECT_EQ(NumericError("x").exit_code(), 4);
}
