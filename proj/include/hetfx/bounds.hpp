#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/binomial.hpp>

#include "hetfx/binary.hpp"
#include "hetfx/core.hpp"
#include "hetfx/normal.hpp"
#include "hetfx/signed_rank.hpp"

namespace hetfx {

struct McNemarBound {
  double p_upper = 1.0;
  long long discordant = 0;
  long long treated_positive = 0;  // discordant pairs with the treated unit at 1
  bool exact = true;
  std::vector<std::string> diagnostics;
};

// Upper bound on the one-sided McNemar P-value under bias at most Γ:
// Pr(Binomial(D, Γ/(1+Γ)) >= T).
inline McNemarBound mcnemar_upper_p(std::span<const BinaryPair> pairs, const SensitivitySpec& sens) {
  McNemarBound r;
  for (const auto& p : pairs) {
    if (p.rt != p.rc) ++r.discordant;
    if (p.rt == 1 && p.rc == 0) ++r.treated_positive;
  }
  if (r.discordant == 0) {
    r.diagnostics.push_back("no discordant pairs");
    return r;
  }
  if (r.treated_positive == 0) return r;
  const double pu = sens.p_upper();
  if (r.discordant <= 1000) {
    boost::math::binomial_distribution<double> b(static_cast<double>(r.discordant), pu);
    r.p_upper = boost::math::cdf(boost::math::complement(b, static_cast<double>(r.treated_positive - 1)));
  } else {
    r.exact = false;
    const double d = static_cast<double>(r.discordant);
    const double z = (static_cast<double>(r.treated_positive) - 0.5 - d * pu) / std::sqrt(d * pu * (1.0 - pu));
    r.p_upper = 1.0 - norm_cdf(z);
  }
  return r;
}

inline McNemarBound mcnemar_upper_p(const MatchedPairSet& data, const SensitivitySpec& sens) {
  const auto pairs = binary_pairs(data);
  return mcnemar_upper_p(pairs, sens);
}

struct TruncatedProductOptions {
  double truncation = 0.2;
  std::size_t mc_reps = 1'000'000;
  std::uint64_t seed = 20190101;
};

inline double truncated_log_product(std::span<const double> p, double truncation) {
  double s = 0.0;
  for (double v : p)
    if (v <= truncation) s += std::log(v);
  return s;
}

// Combined P-value of the truncated product W = Π p_i^{1(p_i <= truncation)},
// by Monte Carlo over independent uniforms. Batches draw from derived seeds
// so the result does not depend on how batches are scheduled.
inline double truncated_product(std::span<const double> pvalues, const TruncatedProductOptions& opt = {}) {
  if (pvalues.empty()) throw ConfigError("truncated product needs at least one P-value");
  if (!(opt.truncation > 0.0 && opt.truncation <= 1.0)) throw ConfigError("truncation must lie in (0, 1]");
  if (opt.mc_reps == 0) throw ConfigError("mc_reps must be positive");
  for (double v : pvalues)
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("P-values must lie in [0, 1]");
  bool any = false;
  for (double v : pvalues) any = any || v <= opt.truncation;
  if (!any) return 1.0;
  const double w = truncated_log_product(pvalues, opt.truncation);
  if (!std::isfinite(w)) return 0.0;
  constexpr std::size_t batch = 65536;
  std::size_t hits = 0;
  std::vector<double> u(pvalues.size());
  for (std::size_t start = 0, b = 0; start < opt.mc_reps; start += batch, ++b) {
    std::mt19937_64 rng(mix_seed(opt.seed, b));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const std::size_t end = std::min(opt.mc_reps, start + batch);
    for (std::size_t r = start; r < end; ++r) {
      for (auto& x : u) x = unif(rng);
      if (truncated_log_product(u, opt.truncation) <= w) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(opt.mc_reps);
}

// Fisher's combination, the truncation = 1 special case, in closed form.
inline double fisher_combined(std::span<const double> pvalues) {
  double lw = 0.0;
  for (double v : pvalues) lw += std::log(v);
  const double x = -lw;
  double term = 1.0, sum = 1.0;
  for (std::size_t k = 1; k < pvalues.size(); ++k) {
    term *= x / static_cast<double>(k);
    sum += term;
  }
  return std::exp(lw) * sum;
}

// Γ implied by a confounder with treatment odds Λ and outcome odds Δ.
inline double amplify_point(double lambda, double delta) {
  if (!(lambda >= 1.0 && delta >= 1.0)) throw ConfigError("amplification needs lambda >= 1 and delta >= 1");
  return (delta * lambda + 1.0) / (delta + lambda);
}

struct AmplifiedPoint {
  double delta;
  double lambda;
};

// (Λ, Δ) pairs equivalent to Γ, on the given Δ values (those with Δ <= Γ are
// skipped since no finite Λ reaches Γ there).
inline std::vector<AmplifiedPoint> amplify(double gamma, std::span<const double> deltas) {
  if (!(gamma >= 1.0)) throw ConfigError("sensitivity parameter gamma must be >= 1");
  std::vector<AmplifiedPoint> out;
  for (double d : deltas) {
    if (!(d > gamma)) continue;
    out.push_back({d, (gamma * d - 1.0) / (d - gamma)});
  }
  return out;
}

inline std::vector<AmplifiedPoint> amplify(double gamma, std::size_t points = 50, double delta_max = 0.0) {
  if (!(gamma >= 1.0)) throw ConfigError("sensitivity parameter gamma must be >= 1");
  if (delta_max <= gamma) delta_max = std::max(10.0, 5.0 * gamma);
  std::vector<double> grid;
  for (std::size_t i = 1; i <= points; ++i)
    grid.push_back(gamma + (delta_max - gamma) * static_cast<double>(i) / static_cast<double>(points));
  return amplify(gamma, grid);
}

}  // namespace hetfx
