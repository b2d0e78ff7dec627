#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hetfx/core.hpp"
#include "hetfx/tree.hpp"
#include "json.hpp"

namespace hetfx {

// Orders ids numerically when both parse as integers, otherwise lexically.
inline bool natural_less(const std::string& a, const std::string& b) {
  auto as_int = [](const std::string& s, long long& v) {
    if (s.empty() || s.size() > 18) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i == s.size()) return false;
    for (std::size_t k = i; k < s.size(); ++k)
      if (s[k] < '0' || s[k] > '9') return false;
    v = std::stoll(s);
    return true;
  };
  long long x = 0, y = 0;
  const bool ix = as_int(a, x), iy = as_int(b, y);
  if (ix && iy) return x < y || (x == y && a < b);
  if (ix != iy) return ix;
  return a < b;
}

// Pair indices sorted by pair id; every random choice is made over this order
// so results do not depend on input row order.
inline std::vector<std::size_t> canonical_order(const MatchedPairSet& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return natural_less(data.pairs()[a].pair_id, data.pairs()[b].pair_id);
  });
  return idx;
}

struct SplitPlan {
  double discovery_fraction = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::size_t> discovery_index;     // positions in the source set, ascending
  std::vector<std::size_t> confirmation_index;  // positions in the source set, ascending
  std::vector<std::string> discovery_ids;
  std::vector<std::string> confirmation_ids;

  nlohmann::json to_json() const {
    return {{"discovery_fraction", discovery_fraction},
            {"confirmation_fraction", 1.0 - discovery_fraction},
            {"seed", seed},
            {"rounding", "floor"},
            {"discovery_ids", discovery_ids},
            {"confirmation_ids", confirmation_ids}};
  }
};

// Number of discovery pairs: floor(fraction * total).
inline std::size_t discovery_count(std::size_t total, double fraction) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
}

inline SplitPlan split_sample(const MatchedPairSet& data, double discovery_fraction, std::uint64_t seed) {
  if (!(discovery_fraction > 0.0 && discovery_fraction < 1.0))
    throw ConfigError("discovery fraction must lie strictly between 0 and 1");
  if (data.size() < 2) throw DataError("at least two pairs are needed to split the sample");
  const std::size_t k = discovery_count(data.size(), discovery_fraction);
  if (k == 0 || k == data.size()) throw ConfigError("split ratio leaves one subsample empty");
  auto order = canonical_order(data);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the plan does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  SplitPlan plan;
  plan.discovery_fraction = discovery_fraction;
  plan.seed = seed;
  plan.discovery_index.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  plan.confirmation_index.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  std::sort(plan.discovery_index.begin(), plan.discovery_index.end());
  std::sort(plan.confirmation_index.begin(), plan.confirmation_index.end());
  for (auto i : plan.discovery_index) plan.discovery_ids.push_back(data.pairs()[i].pair_id);
  for (auto i : plan.confirmation_index) plan.confirmation_ids.push_back(data.pairs()[i].pair_id);
  return plan;
}

enum class GrowthMethod { cart, ct };

inline const char* to_string(GrowthMethod m) { return m == GrowthMethod::cart ? "cart" : "ct"; }

inline GrowthMethod growth_method_from_string(const std::string& s) {
  if (s == "cart" || s == "CART") return GrowthMethod::cart;
  if (s == "ct" || s == "CT") return GrowthMethod::ct;
  throw ConfigError("unknown growth method '" + s + "'");
}

struct GrowthConfig {
  GrowthMethod method = GrowthMethod::cart;
  int min_leaf_pairs = 25;
  int max_depth = 5;
  int cv_folds = 10;
  // Candidate complexity parameters relative to the root sum of squares.
  // Empty: use the full cost-complexity sequence of the grown tree.
  std::vector<double> complexity_grid;
  // Anticipated confirmation share; sets the honesty penalty of CT.
  double honest_fraction_hint = 0.75;
  // Pick the simplest tree within se_rule standard errors of the CV minimum.
  double se_rule = 0.0;
  // A split must improve the risk by split_cp times the root sum of squares;
  // subtrees cheaper than that are never CV candidates.
  double split_cp = 0.0;
  // Select the pruned subtree by cross-validation; false keeps the grown tree.
  bool prune = true;
  std::uint64_t seed = 1;
  // Covariates eligible for splitting; empty means every covariate that is
  // identical within each pair.
  std::vector<std::string> covariates;

  void validate() const {
    if (min_leaf_pairs < 2) throw ConfigError("min_leaf_pairs must be >= 2");
    if (max_depth < 0) throw ConfigError("max_depth must be >= 0");
    if (cv_folds < 2) throw ConfigError("cv_folds must be >= 2");
    if (!std::is_sorted(complexity_grid.begin(), complexity_grid.end()))
      throw ConfigError("complexity grid must be sorted ascending");
    for (double c : complexity_grid)
      if (c < 0) throw ConfigError("complexity grid values must be nonnegative");
    if (method == GrowthMethod::ct && !(honest_fraction_hint > 0.0 && honest_fraction_hint < 1.0))
      throw ConfigError("honest_fraction_hint must lie in (0, 1)");
    if (se_rule < 0) throw ConfigError("se_rule must be nonnegative");
    if (split_cp < 0) throw ConfigError("split_cp must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"method", to_string(method)},       {"min_leaf_pairs", min_leaf_pairs},
            {"max_depth", max_depth},            {"cv_folds", cv_folds},
            {"complexity_grid", complexity_grid}, {"honest_fraction_hint", honest_fraction_hint},
            {"se_rule", se_rule},                {"split_cp", split_cp},              {"prune", prune},
            {"seed", seed},
            {"covariates", covariates}};
  }

  static GrowthConfig from_json(const nlohmann::json& j, GrowthConfig base) {
    if (j.contains("method")) base.method = growth_method_from_string(j["method"].get<std::string>());
    base.min_leaf_pairs = j.value("min_leaf_pairs", base.min_leaf_pairs);
    base.max_depth = j.value("max_depth", base.max_depth);
    base.cv_folds = j.value("cv_folds", base.cv_folds);
    base.complexity_grid = j.value("complexity_grid", base.complexity_grid);
    base.honest_fraction_hint = j.value("honest_fraction_hint", base.honest_fraction_hint);
    base.se_rule = j.value("se_rule", base.se_rule);
    base.split_cp = j.value("split_cp", base.split_cp);
    base.prune = j.value("prune", base.prune);
    base.seed = j.value("seed", base.seed);
    base.covariates = j.value("covariates", base.covariates);
    base.validate();
    return base;
  }

  static GrowthConfig defaults_for(GrowthMethod m) {
    GrowthConfig c;
    c.method = m;
    if (m == GrowthMethod::cart) c.se_rule = 0.05;
    return c;
  }

  static GrowthConfig from_json(const nlohmann::json& j) {
    const auto m = j.contains("method") ? growth_method_from_string(j["method"].get<std::string>()) : GrowthMethod::cart;
    return from_json(j, defaults_for(m));
  }
};

struct CvRow {
  double alpha = 0.0;
  std::size_t leaves = 1;
  double cv_risk = 0.0;
  double cv_se = 0.0;
};

struct GrownTree {
  EffectTree tree;
  std::vector<CvRow> cv_table;
  double chosen_alpha = 0.0;
  std::vector<std::string> covariates_considered;
  std::vector<std::string> diagnostics;
};

namespace detail {

struct FitData {
  std::vector<std::string> names;
  std::vector<CovariateKind> kinds;
  std::vector<std::vector<double>> x;  // x[c][i]
  std::vector<double> y;
};

struct GNode {
  int left = -1, right = -1, depth = 0;
  std::optional<Split> split;
  std::size_t split_cov = 0;
  double n = 0, sum = 0, sumsq = 0;
  double risk = 0;
  bool is_leaf() const { return left < 0; }
};

struct GTree {
  std::vector<GNode> nodes;
};

class Grower {
 public:
  Grower(const FitData& d, const GrowthConfig& cfg, double honesty_lambda)
      : d_(d), cfg_(cfg), lambda_(honesty_lambda) {}

  double risk(double n, double sum, double sumsq) const {
    const double sse = std::max(0.0, sumsq - sum * sum / n);
    if (cfg_.method == GrowthMethod::cart) return sse;
    const double s2 = n > 1 ? sse / (n - 1) : 0.0;
    return -(sum * sum / n - lambda_ * s2);
  }

  // Splits must gain more than cp times the sum of squares at the root.
  GTree grow(const std::vector<std::size_t>& idx, double cp) const {
    GTree t;
    t.nodes.push_back(make_node(idx, 0));
    const auto& r = t.nodes[0];
    const double min_gain = cp * std::max(0.0, r.sumsq - r.sum * r.sum / r.n);
    grow_rec(t, 0, idx, min_gain);
    return t;
  }

 private:
  GNode make_node(const std::vector<std::size_t>& idx, int depth) const {
    GNode g;
    g.depth = depth;
    for (auto i : idx) {
      g.n += 1;
      g.sum += d_.y[i];
      g.sumsq += d_.y[i] * d_.y[i];
    }
    g.risk = risk(g.n, g.sum, g.sumsq);
    return g;
  }

  struct Candidate {
    double gain = -std::numeric_limits<double>::infinity();
    std::size_t cov = 0;
    Split split;
  };

  void consider(Candidate& best, double gain, std::size_t cov, Split&& s) const {
    const bool first = !std::isfinite(best.gain);
    if (first || gain > best.gain + 1e-10 * std::max(1.0, std::abs(best.gain))) best = Candidate{gain, cov, std::move(s)};
  }

  Candidate best_split(const std::vector<std::size_t>& idx, const GNode& node) const {
    Candidate best;
    const std::size_t min_leaf = static_cast<std::size_t>(cfg_.min_leaf_pairs);
    std::vector<std::size_t> cov_order(d_.names.size());
    std::iota(cov_order.begin(), cov_order.end(), std::size_t{0});
    std::sort(cov_order.begin(), cov_order.end(),
              [&](std::size_t a, std::size_t b) { return d_.names[a] < d_.names[b]; });
    std::vector<std::size_t> s(idx);
    for (std::size_t c : cov_order) {
      const auto& xc = d_.x[c];
      if (d_.kinds[c] != CovariateKind::categorical) {
        std::stable_sort(s.begin(), s.end(), [&](std::size_t a, std::size_t b) { return xc[a] < xc[b]; });
        double n = 0, sum = 0, sq = 0;
        for (std::size_t k = 0; k + 1 < s.size(); ++k) {
          const double y = d_.y[s[k]];
          n += 1;
          sum += y;
          sq += y * y;
          if (xc[s[k]] == xc[s[k + 1]]) continue;
          if (k + 1 < min_leaf || s.size() - (k + 1) < min_leaf) continue;
          const double rn = node.n - n, rs = node.sum - sum, rq = node.sumsq - sq;
          const double gain = node.risk - risk(n, sum, sq) - risk(rn, rs, rq);
          Split sp;
          sp.covariate = d_.names[c];
          sp.kind = Split::Kind::threshold;
          sp.threshold = 0.5 * (xc[s[k]] + xc[s[k + 1]]);
          consider(best, gain, c, std::move(sp));
        }
      } else {
        // Order levels by mean response, then scan prefixes.
        std::map<int, std::array<double, 3>> lv;
        for (auto i : idx) {
          auto& a = lv[static_cast<int>(std::lround(xc[i]))];
          a[0] += 1;
          a[1] += d_.y[i];
          a[2] += d_.y[i] * d_.y[i];
        }
        if (lv.size() < 2) continue;
        std::vector<std::pair<int, std::array<double, 3>>> levels(lv.begin(), lv.end());
        std::stable_sort(levels.begin(), levels.end(), [](const auto& a, const auto& b) {
          return a.second[1] / a.second[0] < b.second[1] / b.second[0];
        });
        double n = 0, sum = 0, sq = 0;
        std::vector<int> left;
        for (std::size_t k = 0; k + 1 < levels.size(); ++k) {
          n += levels[k].second[0];
          sum += levels[k].second[1];
          sq += levels[k].second[2];
          left.push_back(levels[k].first);
          if (n < static_cast<double>(min_leaf) || node.n - n < static_cast<double>(min_leaf)) continue;
          const double gain = node.risk - risk(n, sum, sq) - risk(node.n - n, node.sum - sum, node.sumsq - sq);
          Split sp;
          sp.covariate = d_.names[c];
          sp.kind = Split::Kind::category;
          sp.left_levels = left;
          std::sort(sp.left_levels.begin(), sp.left_levels.end());
          consider(best, gain, c, std::move(sp));
        }
      }
    }
    return best;
  }

  void grow_rec(GTree& t, int id, const std::vector<std::size_t>& idx, double min_gain) const {
    if (t.nodes[id].depth >= cfg_.max_depth) return;
    if (idx.size() < 2 * static_cast<std::size_t>(cfg_.min_leaf_pairs)) return;
    auto best = best_split(idx, t.nodes[id]);
    if (!(best.gain > min_gain)) return;
    std::vector<std::size_t> li, ri;
    for (auto i : idx) (best.split.goes_left(d_.x[best.cov][i]) ? li : ri).push_back(i);
    const int depth = t.nodes[id].depth + 1;
    const int l = static_cast<int>(t.nodes.size());
    t.nodes.push_back(make_node(li, depth));
    t.nodes.push_back(make_node(ri, depth));
    t.nodes[id].left = l;
    t.nodes[id].right = l + 1;
    t.nodes[id].split = best.split;
    t.nodes[id].split_cov = best.cov;
    grow_rec(t, l, li, min_gain);
    grow_rec(t, l + 1, ri, min_gain);
  }

  const FitData& d_;
  const GrowthConfig& cfg_;
  double lambda_;
};

// Leaves of the optimal subtree for complexity alpha: keep[id] == false means
// the node is collapsed into a leaf (or lies below one).
inline std::vector<char> prune_at(const GTree& t, double alpha) {
  std::vector<char> leaf(t.nodes.size(), 0);
  std::vector<double> cost(t.nodes.size(), 0.0);
  // Children always carry larger ids than their parent.
  for (int id = static_cast<int>(t.nodes.size()) - 1; id >= 0; --id) {
    const auto& n = t.nodes[id];
    if (n.is_leaf()) {
      cost[id] = n.risk + alpha;
      leaf[id] = 1;
      continue;
    }
    const double sub = cost[n.left] + cost[n.right];
    const double as_leaf = n.risk + alpha;
    if (as_leaf <= sub + 1e-12 * std::max(1.0, std::abs(sub))) {
      cost[id] = as_leaf;
      leaf[id] = 1;
    } else {
      cost[id] = sub;
    }
  }
  return leaf;
}

// Critical complexities of the weakest-link sequence, ascending; the last
// one collapses the tree to its root.
inline std::vector<double> pruning_sequence(const GTree& t) {
  std::vector<double> alphas;
  std::vector<char> collapsed(t.nodes.size(), 0);
  const std::size_t m = t.nodes.size();
  for (;;) {
    // Nodes of the current subtree, parents before children.
    std::vector<int> active;
    std::vector<int> stack{0};
    while (!stack.empty()) {
      const int id = stack.back();
      stack.pop_back();
      active.push_back(id);
      if (!t.nodes[id].is_leaf() && !collapsed[id]) {
        stack.push_back(t.nodes[id].right);
        stack.push_back(t.nodes[id].left);
      }
    }
    std::vector<double> subrisk(m, 0.0), leaves(m, 0.0), g(m, std::numeric_limits<double>::infinity());
    double best = std::numeric_limits<double>::infinity();
    for (auto it = active.rbegin(); it != active.rend(); ++it) {
      const int id = *it;
      const auto& n = t.nodes[id];
      if (n.is_leaf() || collapsed[id]) {
        subrisk[id] = n.risk;
        leaves[id] = 1;
        continue;
      }
      subrisk[id] = subrisk[n.left] + subrisk[n.right];
      leaves[id] = leaves[n.left] + leaves[n.right];
      g[id] = (n.risk - subrisk[id]) / (leaves[id] - 1);
      best = std::min(best, g[id]);
    }
    if (!std::isfinite(best)) break;
    for (int id : active)
      if (g[id] <= best + 1e-12 * std::max(1.0, std::abs(best))) collapsed[id] = 1;
    best = std::max(best, 0.0);
    if (alphas.empty() || best > alphas.back()) alphas.push_back(best);
  }
  return alphas;
}

inline std::size_t count_leaves(const GTree& t, const std::vector<char>& leaf) {
  std::size_t c = 0;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    if (leaf[id] || t.nodes[id].is_leaf()) {
      ++c;
    } else {
      stack.push_back(t.nodes[id].left);
      stack.push_back(t.nodes[id].right);
    }
  }
  return c;
}

inline int leaf_for(const GTree& t, const std::vector<char>& leaf, const FitData& d, std::size_t i) {
  int id = 0;
  while (!(leaf[id] || t.nodes[id].is_leaf())) {
    const auto& n = t.nodes[id];
    id = n.split->goes_left(d.x[n.split_cov][i]) ? n.left : n.right;
  }
  return id;
}

// Converts the pruned grower tree into an EffectTree built breadth first.
inline EffectTree to_effect_tree(const GTree& t, const std::vector<char>& leaf) {
  EffectTree out;
  std::vector<std::pair<int, int>> queue{{0, 0}};
  for (std::size_t q = 0; q < queue.size(); ++q) {
    auto [src, dst] = queue[q];
    const auto& n = t.nodes[src];
    if (leaf[src] || n.is_leaf()) continue;
    auto [l, r] = out.add_split(dst, *n.split);
    queue.push_back({n.left, l});
    queue.push_back({n.right, r});
  }
  return out;
}

}  // namespace detail

// Covariates whose treated and control values agree in every pair.
inline std::vector<std::string> pair_constant_covariates(const MatchedPairSet& data) {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < data.schema().size(); ++c) {
    bool same = true;
    for (const auto& p : data.pairs())
      if (p.treated.covariates[c] != p.control.covariates[c]) {
        same = false;
        break;
      }
    if (same) out.push_back(data.schema().covariates[c].name);
  }
  return out;
}

// Fits a regression tree to within-pair differences with the chosen split
// criterion, then selects the pruned subtree by k-fold cross-validation.
inline GrownTree grow_tree(const MatchedPairSet& discovery, const GrowthConfig& cfg) {
  cfg.validate();
  if (discovery.empty()) throw DataError("discovery subsample is empty");
  GrownTree out;

  std::vector<std::string> names = cfg.covariates.empty() ? pair_constant_covariates(discovery) : cfg.covariates;
  std::sort(names.begin(), names.end());
  detail::FitData d;
  const auto order = canonical_order(discovery);
  for (const auto& name : names) {
    const std::size_t c = discovery.schema().index_of(name);
    std::vector<double> col;
    col.reserve(order.size());
    for (auto i : order) {
      const auto& p = discovery.pairs()[i];
      if (p.treated.covariates[c] != p.control.covariates[c])
        throw DataError("covariate '" + name + "' differs within pair '" + p.pair_id + "'; it cannot route pairs");
      col.push_back(p.treated.covariates[c]);
    }
    d.names.push_back(name);
    d.kinds.push_back(discovery.schema().covariates[c].kind);
    d.x.push_back(std::move(col));
  }
  for (auto i : order) d.y.push_back(discovery.pairs()[i].difference());
  out.covariates_considered = d.names;

  const std::size_t n = d.y.size();
  double mean = 0;
  for (double y : d.y) mean += y;
  mean /= static_cast<double>(n);
  double root_sse = 0;
  for (double y : d.y) root_sse += (y - mean) * (y - mean);
  if (root_sse <= 0 || d.names.empty()) {
    out.diagnostics.push_back(d.names.empty() ? "no structure: no covariate is shared within pairs"
                                              : "no structure: all responses are identical");
    return out;
  }

  // Honesty penalty: 1 + N_train / N_est, N_est from the planned confirmation share.
  const double share = cfg.honest_fraction_hint;
  const double lambda = 1.0 + (1.0 - share) / share;
  detail::Grower grower(d, cfg, lambda);

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double min_gain = cfg.split_cp * root_sse;
  const auto full = grower.grow(all, cfg.split_cp);

  std::vector<double> alphas;
  if (cfg.complexity_grid.empty()) {
    // The unpruned tree, then each subtree of the weakest-link sequence.
    alphas.push_back(min_gain);
    for (double a : detail::pruning_sequence(full))
      if (a > alphas.back()) alphas.push_back(a);
  } else {
    for (double c : cfg.complexity_grid) alphas.push_back(c * root_sse);
  }
  if (full.nodes.size() == 1) {
    out.diagnostics.push_back("no structure: no admissible split");
    return out;
  }
  if (!cfg.prune) {
    out.tree = detail::to_effect_tree(full, std::vector<char>(full.nodes.size(), 0));
    return out;
  }
  // Evaluation points: geometric midpoints of consecutive critical values.
  std::vector<double> beta(alphas.size());
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    if (cfg.complexity_grid.empty())
      beta[k] = k + 1 < alphas.size() ? std::sqrt(alphas[k] * alphas[k + 1]) : 2.0 * alphas[k] + 1e-12;
    else
      beta[k] = alphas[k];
  }

  // Fold labels over the canonical order.
  std::vector<int> fold(n);
  {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
    for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(cfg.cv_folds));
  }
  std::vector<std::vector<double>> loss(beta.size(), std::vector<double>(n, 0.0));
  for (int f = 0; f < cfg.cv_folds; ++f) {
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? val : train).push_back(i);
    if (train.empty() || val.empty()) continue;
    const auto ft = grower.grow(train, cfg.split_cp);
    for (std::size_t k = 0; k < beta.size(); ++k) {
      const auto leaf = detail::prune_at(ft, beta[k]);
      if (cfg.method == GrowthMethod::cart) {
        for (auto i : val) {
          const auto& nd = ft.nodes[detail::leaf_for(ft, leaf, d, i)];
          const double pred = nd.sum / nd.n;
          loss[k][i] = (d.y[i] - pred) * (d.y[i] - pred);
        }
        continue;
      }
      // CT scores each leaf by n*tau^2 estimated without bias from the
      // validation pairs in it, shared equally among those pairs.
      std::map<int, std::vector<std::size_t>> members;
      for (auto i : val) members[detail::leaf_for(ft, leaf, d, i)].push_back(i);
      for (const auto& [id, m] : members) {
        double sum = 0.0, sumsq = 0.0;
        for (auto i : m) { sum += d.y[i]; sumsq += d.y[i] * d.y[i]; }
        const double nv = static_cast<double>(m.size());
        const auto& nd = ft.nodes[id];
        const double s2 = m.size() > 1 ? (sumsq - sum * sum / nv) / (nv - 1.0)
                                       : (nd.n > 1 ? (nd.sumsq - nd.sum * nd.sum / nd.n) / (nd.n - 1) : 0.0);
        const double value = sum * sum / nv - s2;
        for (auto i : m) loss[k][i] = -value / nv;
      }
    }
  }

  std::size_t best = 0;
  for (std::size_t k = 0; k < beta.size(); ++k) {
    CvRow row;
    row.alpha = alphas[k];
    row.leaves = detail::count_leaves(full, detail::prune_at(full, alphas[k]));
    double s = 0, s2 = 0;
    for (double v : loss[k]) {
      s += v;
      s2 += v * v;
    }
    row.cv_risk = s;
    const double m = s / static_cast<double>(n);
    row.cv_se = std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m) * static_cast<double>(n));
    out.cv_table.push_back(row);
    if (row.cv_risk < out.cv_table[best].cv_risk - 1e-12 * std::max(1.0, std::abs(out.cv_table[best].cv_risk)))
      best = k;
  }
  std::size_t chosen = best;
  if (cfg.se_rule > 0) {
    const double limit = out.cv_table[best].cv_risk + cfg.se_rule * out.cv_table[best].cv_se;
    for (std::size_t k = best; k < out.cv_table.size(); ++k)
      if (out.cv_table[k].cv_risk <= limit) chosen = k;
  }
  out.chosen_alpha = alphas[chosen];
  out.tree = detail::to_effect_tree(full, detail::prune_at(full, alphas[chosen]));
  if (out.tree.leaf_count() == 1) out.diagnostics.push_back("no structure: cross-validation selected the root");
  return out;
}

inline GrownTree grow_cart(const MatchedPairSet& discovery, GrowthConfig cfg) {
  cfg.method = GrowthMethod::cart;
  return grow_tree(discovery, cfg);
}

inline GrownTree grow_ct(const MatchedPairSet& discovery, GrowthConfig cfg) {
  cfg.method = GrowthMethod::ct;
  return grow_tree(discovery, cfg);
}

}  // namespace hetfx
