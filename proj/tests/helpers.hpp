#pragma once

#include <random>
#include <string>
#include <vector>

#include "hetfx/hetfx.hpp"

namespace testutil {

// Pairs with binary covariates x1..xk shared inside each pair and
// differences d_i = effect(x) + noise. The control outcome is 0.
inline hetfx::MatchedPairSet pairs_with(const std::vector<std::vector<double>>& x, const std::vector<double>& diff,
                                        hetfx::OutcomeKind kind = hetfx::OutcomeKind::continuous) {
  hetfx::Schema s;
  s.outcome = kind;
  const std::size_t k = x.empty() ? 0 : x[0].size();
  for (std::size_t c = 0; c < k; ++c) s.covariates.push_back({"x" + std::to_string(c + 1), hetfx::CovariateKind::binary, {}});
  std::vector<hetfx::MatchedPair> pairs;
  for (std::size_t i = 0; i < diff.size(); ++i) {
    hetfx::MatchedPair p;
    p.pair_id = std::to_string(i + 1);
    p.treated = {"t" + std::to_string(i + 1), true, diff[i], x[i]};
    p.control = {"c" + std::to_string(i + 1), false, 0.0, x[i]};
    pairs.push_back(p);
  }
  return hetfx::MatchedPairSet(s, pairs);
}

// Binary pairs from (treated, control) outcomes, all covariates x1 = group.
inline hetfx::MatchedPairSet binary_set(const std::vector<std::pair<int, int>>& outcomes,
                                        const std::vector<int>& group = {}) {
  hetfx::Schema s;
  s.outcome = hetfx::OutcomeKind::binary;
  s.covariates.push_back({"x1", hetfx::CovariateKind::binary, {}});
  std::vector<hetfx::MatchedPair> pairs;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const double g = group.empty() ? 0.0 : group[i];
    hetfx::MatchedPair p;
    p.pair_id = std::to_string(i + 1);
    p.treated = {"t" + std::to_string(i + 1), true, static_cast<double>(outcomes[i].first), {g}};
    p.control = {"c" + std::to_string(i + 1), false, static_cast<double>(outcomes[i].second), {g}};
    pairs.push_back(p);
  }
  return hetfx::MatchedPairSet(s, pairs);
}

// Root split on x1 (node 1: x1 = 0, node 2: x1 = 1).
inline hetfx::EffectTree stump(const std::string& cov = "x1") {
  hetfx::EffectTree t;
  t.add_split(0, {cov, hetfx::Split::Kind::threshold, 0.5, {}});
  return t;
}

// The three-leaf tree whose conversion matrix is
// [[0,1,1],[1,0,0],[0,1,0],[0,0,1]].
inline hetfx::EffectTree three_leaf() {
  hetfx::EffectTree t;
  auto [l, r] = t.add_split(0, {"x1", hetfx::Split::Kind::threshold, 0.5, {}});
  (void)l;
  t.add_split(r, {"x2", hetfx::Split::Kind::threshold, 0.5, {}});
  return t;
}

inline std::vector<std::vector<double>> random_binary_x(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<std::vector<double>> x(n, std::vector<double>(k));
  for (auto& row : x)
    for (auto& v : row) v = coin(rng) ? 1.0 : 0.0;
  return x;
}

}  // namespace testutil
