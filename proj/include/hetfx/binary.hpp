#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hetfx/core.hpp"
#include "hetfx/joint_test.hpp"
#include "hetfx/signed_rank.hpp"

namespace hetfx {

// Observed (treated, control) outcomes of one pair.
struct BinaryPair {
  int rt = 0;
  int rc = 0;
  int difference() const { return rt - rc; }
};

struct Rational {
  long long num = 0;
  long long den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num) * b.den == static_cast<__int128>(b.num) * a.den;
  }
};

inline long long floor_div(__int128 a, __int128 b) {
  __int128 q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return static_cast<long long>(q);
}

inline long long ceil_div(__int128 a, __int128 b) { return -floor_div(-a, b); }

inline std::vector<BinaryPair> binary_pairs(const MatchedPairSet& data) {
  if (data.outcome_kind() != OutcomeKind::binary) throw DataError("binary analysis needs binary outcomes");
  std::vector<BinaryPair> out;
  out.reserve(data.size());
  for (const auto& p : data.pairs())
    out.push_back({static_cast<int>(std::lround(p.treated.outcome)), static_cast<int>(std::lround(p.control.outcome))});
  return out;
}

struct BinaryEstimate {
  double delta_hat = 0.0;
  std::vector<double> per_group;  // within-group average effect
  std::vector<std::size_t> group_pairs;
};

// Pairs carry equal weight (n_gi / N = 2 / N).
inline BinaryEstimate binary_estimate(const MatchedPairSet& data) {
  const auto pairs = binary_pairs(data);
  BinaryEstimate est;
  if (pairs.empty()) throw DataError("no pairs");
  double total = 0;
  for (const auto& p : pairs) total += p.difference();
  est.delta_hat = total / static_cast<double>(pairs.size());
  if (auto g = data.group_of_pair()) {
    const int G = g->empty() ? 0 : *std::max_element(g->begin(), g->end()) + 1;
    std::vector<double> sum(G, 0.0);
    est.group_pairs.assign(G, 0);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      sum[(*g)[i]] += pairs[i].difference();
      ++est.group_pairs[(*g)[i]];
    }
    for (int k = 0; k < G; ++k)
      est.per_group.push_back(est.group_pairs[k] ? sum[k] / static_cast<double>(est.group_pairs[k]) : 0.0);
  }
  return est;
}

// Nearest multiples of 1/N_g at or below and at or above delta0.
inline std::pair<Rational, Rational> compatible_bracket(const Rational& delta0, long long units_g) {
  if (units_g <= 0) throw DataError("group has no units");
  if (delta0.den <= 0) throw ConfigError("delta0 needs a positive denominator");
  const __int128 scaled = static_cast<__int128>(delta0.num) * units_g;
  return {Rational{floor_div(scaled, delta0.den), units_g}, Rational{ceil_div(scaled, delta0.den), units_g}};
}

// Sums over a counterfactual completion: W = Σ|a - b| and Q = Σ(a - b)^2,
// where a is the observed treated-minus-control difference and b the one
// the other assignment would have produced.
struct CompletionSums {
  long long w = 0;
  long long q = 0;
};

// Optimal completions for every pair total (Σ unit effects) a group can
// take. `lexicographic` maximizes W then Q (the worst case for Γ > 1, where
// W shifts the null mean); `max_variance` maximizes Q then W.
class CompletionTable {
 public:
  CompletionTable() = default;

  explicit CompletionTable(std::span<const BinaryPair> pairs) {
    const long long n = static_cast<long long>(pairs.size());
    offset_ = 2 * n;
    big_ = 4 * n + 1;
    const std::size_t width = static_cast<std::size_t>(4 * n + 1);
    std::vector<long long> lex(width, -1), mq(width, -1), nlex(width), nmq(width);
    lex[offset_] = 0;
    mq[offset_] = 0;
    long long lo = 0, hi = 0;
    for (const auto& p : pairs) {
      const int a = p.difference();
      std::fill(nlex.begin(), nlex.end(), -1);
      std::fill(nmq.begin(), nmq.end(), -1);
      for (int b = -1; b <= 1; ++b) {
        const long long s = a + b;
        const long long w = std::abs(a - b);
        const long long q = w * w;
        for (long long t = lo; t <= hi; ++t) {
          const std::size_t from = static_cast<std::size_t>(t + offset_);
          const std::size_t to = static_cast<std::size_t>(t + s + offset_);
          if (lex[from] >= 0) nlex[to] = std::max(nlex[to], lex[from] + w * big_ + q);
          if (mq[from] >= 0) nmq[to] = std::max(nmq[to], mq[from] + q * big_ + w);
        }
      }
      std::swap(lex, nlex);
      std::swap(mq, nmq);
      // Feasible totals move by the pair's smallest and largest options.
      lo_ += a - 1;
      hi_ += a + 1;
      lo = lo_;
      hi = hi_;
    }
    lex_ = std::move(lex);
    mq_ = std::move(mq);
  }

  long long min_total() const { return lo_; }
  long long max_total() const { return hi_; }
  bool feasible(long long total) const { return total >= lo_ && total <= hi_; }

  CompletionSums lexicographic(long long total) const {
    const long long v = at(lex_, total);
    return {v / big_, v % big_};
  }
  CompletionSums max_variance(long long total) const {
    const long long v = at(mq_, total);
    return {v % big_, v / big_};
  }

 private:
  long long at(const std::vector<long long>& table, long long total) const {
    if (!feasible(total)) throw DataError("incompatible null: no completion reaches the requested total");
    const long long v = table[static_cast<std::size_t>(total + offset_)];
    if (v < 0) throw DataError("incompatible null: no completion reaches the requested total");
    return v;
  }

  long long offset_ = 0, big_ = 1, lo_ = 0, hi_ = 0;
  std::vector<long long> lex_, mq_;
};

struct BinaryWorstCase {
  long long target_total = 0;
  CompletionSums sums;
  double variance = 0.0;
  double mu_upper = 0.0;
  double mu_lower = 0.0;
};

inline BinaryWorstCase binary_moments(const CompletionSums& c, long long total, const SensitivitySpec& sens) {
  const double pu = sens.p_upper();
  BinaryWorstCase r;
  r.target_total = total;
  r.sums = c;
  r.variance = 4.0 * pu * (1.0 - pu) * static_cast<double>(c.q);
  r.mu_upper = static_cast<double>(total) + (2.0 * pu - 1.0) * static_cast<double>(c.w);
  r.mu_lower = static_cast<double>(total) - (2.0 * pu - 1.0) * static_cast<double>(c.w);
  return r;
}

// Worst-case variance of T_g = 2 Σ (R_t - R_c) over completions whose unit
// effects sum to N_g * delta_target. At Γ = 1 the variance itself is
// maximized; for Γ > 1 the completion first maximizes the mean shift.
inline BinaryWorstCase worst_case_variance(std::span<const BinaryPair> pairs, const Rational& delta_target,
                                           const SensitivitySpec& sens) {
  const long long units = 2 * static_cast<long long>(pairs.size());
  if (units == 0) throw DataError("group has no pairs");
  const __int128 scaled = static_cast<__int128>(delta_target.num) * units;
  if (scaled % delta_target.den != 0) throw ConfigError("delta target is not compatible with the group size");
  const long long total = static_cast<long long>(scaled / delta_target.den);
  CompletionTable table(pairs);
  const auto sums = sens.gamma > 1.0 ? table.lexicographic(total) : table.max_variance(total);
  return binary_moments(sums, total, sens);
}

struct BinaryGroupModel {
  std::vector<BinaryPair> pairs;
  long long statistic = 0;  // T_g = 2 Σ (R_t - R_c)
  long long units = 0;
  CompletionTable table;

  explicit BinaryGroupModel(std::vector<BinaryPair> p) : pairs(std::move(p)), table(pairs) {
    units = 2 * static_cast<long long>(pairs.size());
    for (const auto& x : pairs) statistic += 2 * x.difference();
  }

  // Leaf moments at a feasible total; for Γ > 1 the less extreme of the two
  // completion rules is kept so the deviate cannot grow with Γ.
  LeafMoments at_total(long long total, const SensitivitySpec& sens) const {
    LeafMoments best;
    double best_dev = std::numeric_limits<double>::infinity();
    auto consider = [&](const CompletionSums& c) {
      const auto m = binary_moments(c, total, sens);
      LeafMoments lm{static_cast<double>(statistic), m.mu_upper, m.mu_lower, m.variance, m.variance <= 0.0};
      const double dev = lm.degenerate ? (statistic > m.mu_upper || statistic < m.mu_lower
                                              ? std::numeric_limits<double>::infinity()
                                              : 0.0)
                                       : std::abs(worst_case_deviate(lm.statistic, lm.mu_upper, lm.mu_lower,
                                                                     std::sqrt(lm.variance)));
      if (dev < best_dev) {
        best_dev = dev;
        best = lm;
      }
    };
    consider(table.max_variance(total));
    if (sens.gamma > 1.0) consider(table.lexicographic(total));
    return best;
  }

  // Evaluates both compatible neighbours of delta0 and keeps the one with the
  // smaller leaf deviate; totals outside the feasible range are clamped.
  LeafMoments bracketed(const Rational& delta0, const SensitivitySpec& sens, bool* clamped = nullptr) const {
    auto [lo, hi] = compatible_bracket(delta0, units);
    long long tl = lo.num, th = hi.num;
    const long long cl = std::clamp(tl, table.min_total(), table.max_total());
    const long long ch = std::clamp(th, table.min_total(), table.max_total());
    if (clamped && (cl != tl || ch != th)) *clamped = true;
    const auto a = at_total(cl, sens);
    if (ch == cl) return a;
    const auto b = at_total(ch, sens);
    auto dev = [](const LeafMoments& m) {
      if (m.degenerate) return m.statistic > m.mu_upper || m.statistic < m.mu_lower
                                   ? std::numeric_limits<double>::infinity()
                                   : 0.0;
      return std::abs(worst_case_deviate(m.statistic, m.mu_upper, m.mu_lower, std::sqrt(m.variance)));
    };
    return dev(b) < dev(a) ? b : a;
  }
};

struct BinaryGroups {
  std::vector<BinaryGroupModel> groups;
  BinaryGroupModel pooled{{}};

  long long units() const { return pooled.units; }

  static BinaryGroups from(const MatchedPairSet& data, std::size_t group_count) {
    auto g = data.group_of_pair();
    if (!g) throw ConfigError("pairs carry no group assignment");
    const auto all = binary_pairs(data);
    std::vector<std::vector<BinaryPair>> parts(group_count);
    for (std::size_t i = 0; i < all.size(); ++i) {
      const int k = (*g)[i];
      if (k < 0 || static_cast<std::size_t>(k) >= group_count) throw DataError("group index out of range");
      parts[k].push_back(all[i]);
    }
    BinaryGroups out;
    for (auto& p : parts) {
      if (p.empty()) throw DataError("a terminal node received no confirmation pairs");
      out.groups.emplace_back(std::move(p));
    }
    out.pooled = BinaryGroupModel(all);
    return out;
  }

  static BinaryGroups from(const Assignment& a) { return from(a.data, a.leaf_sizes.size()); }
};

inline JointDeviates binary_deviates_at(const BinaryGroups& data, const ConversionMatrix& C, const Rational& delta0,
                                        const SensitivitySpec& sens, std::vector<std::string>* diagnostics = nullptr) {
  std::vector<LeafMoments> leaves;
  leaves.reserve(data.groups.size());
  bool clamped = false;
  for (const auto& g : data.groups) leaves.push_back(g.bracketed(delta0, sens, &clamped));
  auto j = combine_deviates(C, leaves);
  if (clamped && diagnostics) diagnostics->push_back("group bracket clamped to its feasible boundary");
  return j;
}

// Pooled Γ-bounded test of delta = d / N; returns the conservative deviate.
inline double pooled_binary_deviate(const BinaryGroupModel& pooled, long long total, const SensitivitySpec& sens) {
  const auto m = pooled.at_total(total, sens);
  if (m.degenerate) return m.statistic > m.mu_upper   ? std::numeric_limits<double>::infinity()
                           : m.statistic < m.mu_lower ? -std::numeric_limits<double>::infinity()
                                                      : 0.0;
  return worst_case_deviate(m.statistic, m.mu_upper, m.mu_lower, std::sqrt(m.variance));
}

// Totals d (delta = d / N) not rejected by the pooled two-sided level-gamma_ci
// test, searched in a ±5 SE window around the estimate that grows on demand.
inline std::pair<long long, long long> binary_ci(const BinaryGroupModel& pooled, double gamma_ci,
                                                 const SensitivitySpec& sens) {
  const double z = norm_quantile(1.0 - gamma_ci / 2.0);
  const long long N = pooled.units;
  double sq = 0;
  for (const auto& p : pooled.pairs) sq += 4.0 * p.difference() * p.difference();
  long long half = static_cast<long long>(std::ceil(5.0 * std::sqrt(sq))) + 2;
  const long long centre = pooled.statistic;
  for (;;) {
    const long long lo = std::max(pooled.table.min_total(), centre - half);
    const long long hi = std::min(pooled.table.max_total(), centre + half);
    long long a = std::numeric_limits<long long>::max(), b = std::numeric_limits<long long>::min();
    for (long long d = lo; d <= hi; ++d) {
      if (std::abs(pooled_binary_deviate(pooled, d, sens)) <= z) {
        a = std::min(a, d);
        b = std::max(b, d);
      }
    }
    if (a > b) throw NumericError("binary confidence set is empty");
    const bool open_lo = a == lo && lo > pooled.table.min_total();
    const bool open_hi = b == hi && hi < pooled.table.max_total();
    if (!(open_lo || open_hi) || half > 2 * N) return {a, b};
    half *= 2;
  }
}

// CI-method test for binary outcomes: the least favourable joint maximum
// deviate over compatible delta0 = d / N in the (1 - gamma_ci) confidence
// set (whole feasible range when gamma_ci = 0). `tau` fields carry delta0.
inline CiTestResult binary_joint_test(const BinaryGroups& data, const ConversionMatrix& C, double gamma_ci,
                                      double alpha, const SensitivitySpec& sens, const MvnOptions& mvn = {},
                                      const std::vector<int>& subset = {}, bool keep_scan = true,
                                      const std::vector<long long>& extra_totals = {}) {
  HypothesisSpec{0.0, gamma_ci, alpha}.validate();
  if (data.groups.size() != C.cols()) throw ConfigError("group count does not match the conversion matrix");
  CiTestResult res;
  res.alpha = alpha;
  res.gamma_ci = gamma_ci;
  res.gamma = sens.gamma;
  const long long N = data.units();
  const long long lo_feasible = data.pooled.table.min_total(), hi_feasible = data.pooled.table.max_total();

  long long ci_lo = lo_feasible, ci_hi = hi_feasible;
  if (gamma_ci > 0) {
    std::tie(ci_lo, ci_hi) = binary_ci(data.pooled, gamma_ci, sens);
    res.ci_low = static_cast<double>(ci_lo) / static_cast<double>(N);
    res.ci_high = static_cast<double>(ci_hi) / static_cast<double>(N);
  }

  // Critical value at the compatible value closest to the estimate.
  const long long ref = std::clamp(data.pooled.statistic, ci_lo, ci_hi);
  auto ref_joint = binary_deviates_at(data, C, Rational{ref, N}, SensitivitySpec(1.0));
  for (auto& d : ref_joint.diagnostics) res.diagnostics.push_back(d);
  std::vector<std::size_t> idx;
  if (subset.empty()) {
    idx.resize(ref_joint.node_ids.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    res.kappa = critical_value(ref_joint.rho, alpha, mvn, &res.diagnostics);
  } else {
    idx = resolve_nodes(ref_joint, subset);
    res.kappa = critical_value(sub_correlation(ref_joint.rho, idx), alpha, mvn, &res.diagnostics);
  }
  for (auto i : idx) res.node_ids.push_back(ref_joint.node_ids[i]);

  bool clamped = false;
  std::vector<std::string> scratch;
  auto stat = [&](long long d) {
    auto j = binary_deviates_at(data, C, Rational{d, N}, sens, &scratch);
    if (!scratch.empty()) clamped = true;
    scratch.clear();
    double m = 0.0;
    for (std::size_t r = 0; r < j.node_ids.size(); ++r)
      if (std::find(res.node_ids.begin(), res.node_ids.end(), j.node_ids[r]) != res.node_ids.end())
        m = std::max(m, std::abs(j.D[r]));
    return std::make_pair(m, std::move(j));
  };

  long long lo = ci_lo, hi = ci_hi;
  if (gamma_ci <= 0) {
    // Start from the estimate and widen until both ends clear kappa + 2.
    long long half = 16;
    for (;;) {
      lo = std::max(lo_feasible, ref - half);
      hi = std::min(hi_feasible, ref + half);
      const bool lo_done = lo == lo_feasible || stat(lo).first > res.kappa + 2.0;
      const bool hi_done = hi == hi_feasible || stat(hi).first > res.kappa + 2.0;
      if (lo_done && hi_done) break;
      half *= 2;
    }
  }
  res.d_min = std::numeric_limits<double>::infinity();
  auto visit = [&](long long d) {
    auto [m, j] = stat(d);
    if (keep_scan) res.scan.push_back({static_cast<double>(d) / static_cast<double>(N), m});
    if (m < res.d_min) {
      res.d_min = m;
      res.tau_at_min = static_cast<double>(d) / static_cast<double>(N);
      res.deviates_at_min.clear();
      for (int id : res.node_ids) res.deviates_at_min.push_back(j.D[*j.index_of(id)]);
    }
  };
  for (long long d = lo; d <= hi; ++d) visit(d);
  for (long long d : extra_totals)
    if (d < lo || d > hi) {
      if (gamma_ci > 0 || d < lo_feasible || d > hi_feasible) continue;
      visit(d);
    }
  if (clamped) res.diagnostics.push_back("group bracket clamped to its feasible boundary");
  res.reject = res.d_min > res.kappa;
  return res;
}

inline SensitivityReport binary_sensitivity_sweep(const BinaryGroups& data, const ConversionMatrix& C,
                                                  const std::vector<double>& gamma_grid, double alpha,
                                                  double gamma_ci, const MvnOptions& mvn = {}) {
  const long long N = data.units();
  return run_sensitivity_sweep(gamma_grid, alpha, gamma_ci,
                               [&](double g, double a, double gc, const std::vector<double>& hints) {
                                 std::vector<long long> extra;
                                 for (double h : hints) extra.push_back(std::llround(h * static_cast<double>(N)));
                                 return binary_joint_test(data, C, gc, a, SensitivitySpec(g), mvn, {}, false, extra);
                               });
}

}  // namespace hetfx
