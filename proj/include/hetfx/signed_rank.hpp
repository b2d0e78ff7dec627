#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "hetfx/core.hpp"

namespace hetfx {

struct SensitivitySpec {
  double gamma = 1.0;

  explicit SensitivitySpec(double g = 1.0) : gamma(g) {
    if (!(gamma >= 1.0)) throw ConfigError("sensitivity parameter gamma must be >= 1");
  }
  double p_upper() const { return gamma / (1.0 + gamma); }
  double p_lower() const { return 1.0 / (1.0 + gamma); }
};

// Moments of the bounding statistics T+ and T- for one group. ν+ = ν- for the
// signed-rank family, so a single variance is kept.
struct GroupMoments {
  double statistic = 0.0;
  double mu_upper = 0.0;
  double mu_lower = 0.0;
  double var_upper = 0.0;
  double var_lower = 0.0;
  double sum_q = 0.0;
  double sum_q2 = 0.0;
  std::size_t used_pairs = 0;
  bool degenerate = false;
  std::vector<double> scores;  // filled only on request
};

// Average ranks of |values| (1-based), ties sharing the mean rank.
inline std::vector<double> average_ranks_of_abs(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a]) < std::abs(values[b]);
  });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(values[order[j + 1]]) == std::abs(values[order[i]])) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Wilcoxon signed-rank statistic of (differences - tau) with zero
// differences dropped, and its Γ-bounded null moments.
inline GroupMoments signed_rank_moments(std::span<const double> differences, double tau,
                                        const SensitivitySpec& sens, bool keep_scores = false) {
  std::vector<double> d;
  d.reserve(differences.size());
  for (double y : differences) {
    const double v = y - tau;
    if (v != 0.0) d.push_back(v);
  }
  GroupMoments m;
  m.used_pairs = d.size();
  if (d.empty()) {
    m.degenerate = true;
    return m;
  }
  const auto q = average_ranks_of_abs(d);
  for (std::size_t i = 0; i < d.size(); ++i) {
    m.sum_q += q[i];
    m.sum_q2 += q[i] * q[i];
    if (d[i] > 0) m.statistic += q[i];
  }
  const double pu = sens.p_upper(), pl = sens.p_lower();
  m.mu_upper = pu * m.sum_q;
  m.mu_lower = pl * m.sum_q;
  m.var_upper = pu * (1.0 - pu) * m.sum_q2;
  m.var_lower = pl * (1.0 - pl) * m.sum_q2;
  if (keep_scores) m.scores = q;
  return m;
}

}  // namespace hetfx
