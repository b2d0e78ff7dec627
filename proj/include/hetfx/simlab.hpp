#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hetfx/binary.hpp"
#include "hetfx/core.hpp"
#include "hetfx/discovery.hpp"
#include "hetfx/joint_test.hpp"
#include "hetfx/tree.hpp"
#include "json.hpp"

namespace hetfx {

struct Scenario {
  std::string name = "custom";
  OutcomeKind outcome = OutcomeKind::continuous;
  // Mean effect in stratum (x1, x2) = (0,0), (0,1), (1,0), (1,1).
  std::array<double, 4> effect{0.5, 0.5, 0.5, 0.5};
  std::size_t n_pairs = 2000;
  std::size_t n_covariates = 5;
  std::size_t replications = 1000;
  std::uint64_t seed = 2024;
  // Continuous: unit effect ~ N(effect, effect_sd^2); control outcomes are
  // N(0, control_sd^2) with correlation pair_correlation inside a pair, so
  // the pair difference has variance effect_sd^2 + 2 control_sd^2 (1 - rho).
  double effect_sd = 1.0;
  double control_sd = 1.0;
  double pair_correlation = 0.55;
  // Binary: a pair without an effect has r_C = r_T ~ Bernoulli(baseline) per unit.
  double baseline = 0.5;

  void validate() const {
    if (n_covariates < 2) throw ConfigError("scenarios need at least the two effect modifiers x1 and x2");
    if (n_pairs < 2) throw ConfigError("scenarios need at least two pairs");
    if (outcome == OutcomeKind::binary) {
      for (double d : effect)
        if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("binary effects must be probabilities");
      if (!(baseline >= 0.0 && baseline <= 1.0)) throw ConfigError("baseline must be a probability");
    }
    if (effect_sd < 0 || control_sd < 0) throw ConfigError("standard deviations must be nonnegative");
    if (!(pair_correlation >= 0.0 && pair_correlation <= 1.0))
      throw ConfigError("pair_correlation must lie in [0, 1]");
  }

  double mean_effect() const { return 0.25 * (effect[0] + effect[1] + effect[2] + effect[3]); }

  nlohmann::json to_json() const {
    return {{"name", name},       {"outcome", to_string(outcome)}, {"effect", effect},
            {"n_pairs", n_pairs}, {"n_covariates", n_covariates},  {"replications", replications},
            {"seed", seed},       {"effect_sd", effect_sd},        {"control_sd", control_sd},
            {"pair_correlation", pair_correlation}, {"baseline", baseline}};
  }

  static Scenario from_json(const nlohmann::json& j);

  // The five continuous and five binary designs of the simulation study.
  static Scenario situation(OutcomeKind kind, int k) {
    static const std::array<std::array<double, 4>, 5> cont{{{0.4, 0.4, 0.6, 0.6},
                                                             {0.3, 0.3, 0.7, 0.7},
                                                             {0.4, 0.4, 0.5, 0.7},
                                                             {0.3, 0.3, 0.6, 0.8},
                                                             {0.2, 0.5, 0.5, 0.8}}};
    static const std::array<std::array<double, 4>, 5> bin{{{0.45, 0.45, 0.55, 0.55},
                                                            {0.4, 0.4, 0.6, 0.6},
                                                            {0.45, 0.45, 0.5, 0.6},
                                                            {0.4, 0.4, 0.5, 0.7},
                                                            {0.35, 0.5, 0.5, 0.65}}};
    if (k < 1 || k > 5) throw ConfigError("situation must be 1..5");
    Scenario s;
    s.outcome = kind;
    s.effect = kind == OutcomeKind::binary ? bin[k - 1] : cont[k - 1];
    s.name = std::string(kind == OutcomeKind::binary ? "binary" : "continuous") + "-s" + std::to_string(k);
    return s;
  }

  static Scenario constant(OutcomeKind kind, double effect = 0.5) {
    Scenario s;
    s.outcome = kind;
    s.effect = {effect, effect, effect, effect};
    s.name = std::string(kind == OutcomeKind::binary ? "binary" : "continuous") + "-null";
    return s;
  }
};

inline Scenario Scenario::from_json(const nlohmann::json& j) {
  Scenario s;
  if (j.contains("situation")) {
    s = situation(outcome_kind_from_string(j.value("outcome", std::string("continuous"))), j["situation"].get<int>());
  } else if (j.contains("outcome")) {
    s.outcome = outcome_kind_from_string(j["outcome"].get<std::string>());
  }
  s.name = j.value("name", s.name);
  s.effect = j.value("effect", s.effect);
  s.n_pairs = j.value("n_pairs", s.n_pairs);
  s.n_covariates = j.value("n_covariates", s.n_covariates);
  s.replications = j.value("replications", s.replications);
  s.seed = j.value("seed", s.seed);
  s.effect_sd = j.value("effect_sd", s.effect_sd);
  s.control_sd = j.value("control_sd", s.control_sd);
  s.pair_correlation = j.value("pair_correlation", s.pair_correlation);
  s.baseline = j.value("baseline", s.baseline);
  s.validate();
  return s;
}

inline Schema scenario_schema(const Scenario& s) {
  Schema schema;
  schema.outcome = s.outcome;
  for (std::size_t c = 0; c < s.n_covariates; ++c)
    schema.covariates.push_back({"x" + std::to_string(c + 1), CovariateKind::binary, {}});
  return schema;
}

// One simulated dataset, fully determined by (scenario.seed, rep).
inline MatchedPairSet generate(const Scenario& s, std::uint64_t rep) {
  s.validate();
  std::mt19937_64 rng(mix_seed(s.seed, rep));
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<MatchedPair> pairs;
  pairs.reserve(s.n_pairs);
  for (std::size_t i = 0; i < s.n_pairs; ++i) {
    std::vector<double> x(s.n_covariates);
    for (auto& v : x) v = coin(rng) ? 1.0 : 0.0;
    const double mean = s.effect[static_cast<std::size_t>(2 * x[0] + x[1])];
    MatchedPair p;
    p.pair_id = std::to_string(i + 1);
    p.treated.unit_id = std::to_string(2 * i + 1);
    p.control.unit_id = std::to_string(2 * i + 2);
    p.treated.treated = true;
    p.treated.covariates = x;
    p.control.covariates = x;
    if (s.outcome == OutcomeKind::continuous) {
      const double shared = std::sqrt(s.pair_correlation) * normal(rng);
      const double own = std::sqrt(1.0 - s.pair_correlation);
      const double rc_t = s.control_sd * (shared + own * normal(rng));
      const double rc_c = s.control_sd * (shared + own * normal(rng));
      const double effect = mean + s.effect_sd * normal(rng);
      p.treated.outcome = rc_t + effect;
      p.control.outcome = rc_c;
    } else {
      // Pair effect e ~ Bernoulli(mean) shared by both units: e = 1 means
      // (r_C, r_T) = (0, 1) for each; otherwise r_C = r_T ~ Bernoulli(baseline)
      // independently per unit.
      if (unif(rng) < mean) {
        p.treated.outcome = 1.0;
        p.control.outcome = 0.0;
      } else {
        p.treated.outcome = unif(rng) < s.baseline ? 1.0 : 0.0;
        p.control.outcome = unif(rng) < s.baseline ? 1.0 : 0.0;
      }
    }
    pairs.push_back(std::move(p));
  }
  return MatchedPairSet(scenario_schema(s), std::move(pairs));
}

struct PipelineConfig {
  double discovery_fraction = 0.25;
  GrowthConfig growth = GrowthConfig::defaults_for(GrowthMethod::cart);
  double alpha = 0.04;
  double gamma_ci = 0.01;
  double gamma = 1.0;
  MvnOptions mvn;
  bool run_test = true;

  nlohmann::json to_json() const {
    return {{"discovery_fraction", discovery_fraction},
            {"growth", growth.to_json()},
            {"alpha", alpha},
            {"gamma_ci", gamma_ci},
            {"gamma", gamma},
            {"run_test", run_test}};
  }
};

struct ReplicationOutcome {
  bool rejected = false;
  std::size_t leaves = 1;
  std::vector<std::string> covariates_used;
  double d_min = 0.0;
  double kappa = 0.0;
};

// Split, discover on the first part, confirm on the second.
inline ReplicationOutcome run_pipeline(const MatchedPairSet& data, const PipelineConfig& cfg, std::uint64_t seed) {
  ReplicationOutcome out;
  const auto plan = split_sample(data, cfg.discovery_fraction, mix_seed(seed, 1));
  auto growth = cfg.growth;
  growth.seed = mix_seed(seed, 2);
  growth.honest_fraction_hint = 1.0 - cfg.discovery_fraction;
  const auto grown = grow_tree(data.subset(plan.discovery_index), growth);
  out.leaves = grown.tree.leaf_count();
  const auto used = grown.tree.covariates_used();
  out.covariates_used.assign(used.begin(), used.end());
  if (!cfg.run_test || out.leaves < 2) return out;
  const auto confirmation = data.subset(plan.confirmation_index);
  const auto assigned = assign_pairs(grown.tree, confirmation);
  for (auto n : assigned.leaf_sizes)
    if (n == 0) return out;
  const auto C = build_conversion_matrix(grown.tree);
  CiTestResult r;
  if (data.outcome_kind() == OutcomeKind::continuous) {
    ScanOptions opt;
    opt.mvn = cfg.mvn;
    opt.keep_trace = false;
    r = ci_method_test(GroupedDifferences::from(assigned), C, cfg.gamma_ci, cfg.alpha, SensitivitySpec(cfg.gamma), opt);
  } else {
    r = binary_joint_test(BinaryGroups::from(assigned), C, cfg.gamma_ci, cfg.alpha, SensitivitySpec(cfg.gamma),
                          cfg.mvn, {}, false);
  }
  out.rejected = r.reject;
  out.d_min = r.d_min;
  out.kappa = r.kappa;
  return out;
}

struct SimulationSummary {
  std::string scenario;
  std::string method;
  double discovery_fraction = 0.0;
  std::size_t replications = 0;
  std::size_t rejections = 0;
  double power = 0.0;
  double mc_se = 0.0;
  std::vector<std::string> covariates;
  std::vector<double> discovery_rates;  // aligned with covariates
  double mean_leaves = 0.0;

  double rate(const std::string& cov) const {
    for (std::size_t i = 0; i < covariates.size(); ++i)
      if (covariates[i] == cov) return discovery_rates[i];
    throw ConfigError("unknown covariate '" + cov + "'");
  }
};

inline std::size_t resolve_threads(std::size_t threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return threads;
}

// Runs every replication of the scenario through the pipeline. Work is
// shared across threads but each replication owns its seeds, so results do
// not depend on the thread count.
inline SimulationSummary simulate(const Scenario& s, const PipelineConfig& cfg, std::size_t threads = 0) {
  s.validate();
  std::vector<ReplicationOutcome> results(s.replications);
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(s.replications);
  auto worker = [&] {
    for (;;) {
      const std::size_t r = next.fetch_add(1);
      if (r >= s.replications) return;
      try {
        const auto data = generate(s, r);
        results[r] = run_pipeline(data, cfg, mix_seed(s.seed ^ 0x9e3779b97f4a7c15ULL, r));
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    }
  };
  const std::size_t nt = std::min(resolve_threads(threads), std::max<std::size_t>(1, s.replications));
  if (nt <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < nt; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t r = 0; r < errors.size(); ++r)
    if (!errors[r].empty()) throw NumericError("replication " + std::to_string(r) + ": " + errors[r]);

  SimulationSummary sum;
  sum.scenario = s.name;
  sum.method = to_string(cfg.growth.method);
  sum.discovery_fraction = cfg.discovery_fraction;
  sum.replications = s.replications;
  for (std::size_t c = 0; c < s.n_covariates; ++c) sum.covariates.push_back("x" + std::to_string(c + 1));
  sum.discovery_rates.assign(s.n_covariates, 0.0);
  for (const auto& r : results) {
    sum.rejections += r.rejected ? 1 : 0;
    sum.mean_leaves += static_cast<double>(r.leaves);
    for (const auto& c : r.covariates_used)
      for (std::size_t k = 0; k < sum.covariates.size(); ++k)
        if (sum.covariates[k] == c) sum.discovery_rates[k] += 1.0;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, s.replications));
  sum.power = static_cast<double>(sum.rejections) / n;
  sum.mc_se = std::sqrt(sum.power * (1.0 - sum.power) / n);
  sum.mean_leaves /= n;
  for (auto& v : sum.discovery_rates) v /= n;
  return sum;
}

inline SimulationSummary run_power(const Scenario& s, PipelineConfig cfg, std::size_t threads = 0) {
  cfg.run_test = true;
  return simulate(s, cfg, threads);
}

inline SimulationSummary run_discovery_rates(const Scenario& s, PipelineConfig cfg, std::size_t threads = 0) {
  cfg.run_test = false;
  return simulate(s, cfg, threads);
}

inline std::string power_table_csv(const std::vector<SimulationSummary>& rows) {
  std::ostringstream os;
  os << "scenario,method,discovery_fraction,replications,power,mc_se\n";
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.2f,%zu,%.4f,%.4f", r.discovery_fraction, r.replications, r.power, r.mc_se);
    os << r.scenario << ',' << r.method << ',' << buf << '\n';
  }
  return os.str();
}

inline std::string discovery_table_csv(const std::vector<SimulationSummary>& rows) {
  std::ostringstream os;
  os << "scenario,method,discovery_fraction,replications";
  std::size_t k = 0;
  for (const auto& r : rows) k = std::max(k, r.covariates.size());
  for (std::size_t c = 0; c < k; ++c) os << ",x" << c + 1;
  os << ",mean_leaves\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f,%zu", r.discovery_fraction, r.replications);
    os << r.scenario << ',' << r.method << ',' << buf;
    for (std::size_t c = 0; c < k; ++c) {
      std::snprintf(buf, sizeof buf, ",%.4f", c < r.discovery_rates.size() ? r.discovery_rates[c] : 0.0);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f", r.mean_leaves);
    os << buf << '\n';
  }
  return os.str();
}

}  // namespace hetfx
