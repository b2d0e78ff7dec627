#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <openssl/evp.h>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "CLI11.hpp"
#include "hetfx/hetfx.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hetfx;

namespace {

struct Options {
  std::string input, pairs, split, tree, out_dir = ".";
  double ratio = 0.25;
  std::uint64_t seed = 1;
  std::string method = "ct";
  double gamma = 1.0;
  std::string gamma_grid = "1:2:0.05";
  double alpha = 0.04;
  double gamma_ci = 0.01;
  std::string delta_grid;
  double truncation = 0.2;
  std::size_t mc_reps = 1'000'000;
  std::size_t threads = 0;
  bool unsafe_full_sample = false;
  std::vector<std::string> exact, distance;
  double caliper = -1.0;
  std::vector<int> nodes;
  int min_leaf = 25, max_depth = 5, cv_folds = 10;
  double se_rule = -1.0;  // negative: the method's default
  std::string outcome = "continuous";
  std::string scenario = "s1";
  std::size_t reps = 1000;
  std::size_t n_pairs = 2000;
  bool no_test = false;
  bool emit_data = false;
};

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    out += buf;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Collects artifacts of one invocation and writes its manifest last.
class Run {
 public:
  Run(std::string command, const Options& opt, json config)
      : command_(std::move(command)), opt_(opt), config_(std::move(config)),
        start_(std::chrono::steady_clock::now()) {
    fs::create_directories(opt_.out_dir);
  }

  void input(const std::string& path) {
    if (path.empty()) return;
    inputs_.push_back({{"path", path}, {"sha256", sha256_hex(read_file(path))}});
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = (fs::path(opt_.out_dir) / name).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << content;
    outputs_.push_back({{"path", path}, {"sha256", sha256_hex(content)}});
  }

  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void finish() {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json m{{"subcommand", command_},
           {"seed", opt_.seed},
           {"config", config_},
           {"config_digest", sha256_hex(config_.dump())},
           {"inputs", inputs_},
           {"outputs", outputs_},
           {"versions",
            {{"hetfx", hetfx::version},
             {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                           std::to_string(EIGEN_MINOR_VERSION)},
             {"boost", BOOST_LIB_VERSION}}},
           {"wall_clock_seconds", secs}};
    const auto path = (fs::path(opt_.out_dir) / (command_ + ".manifest.json")).string();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    out << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  const Options& opt_;
  json config_;
  json inputs_ = json::array();
  json outputs_ = json::array();
  std::chrono::steady_clock::time_point start_;
};

// "a:b:step" or "a,b,c".
std::vector<double> parse_grid(const std::string& text, const char* what) {
  std::vector<double> out;
  auto num = [&](const std::string& s) {
    auto v = detail::parse_number(s);
    if (!v) throw ConfigError(std::string("bad number '") + s + "' in " + what);
    return *v;
  };
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3) throw ConfigError(std::string(what) + " must look like start:end:step");
    const double a = num(parts[0]), b = num(parts[1]), step = num(parts[2]);
    if (!(step > 0) || b < a) throw ConfigError(std::string(what) + " needs end >= start and step > 0");
    const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) out.push_back(std::round((a + static_cast<double>(i) * step) * 1e9) / 1e9);
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');)
      if (!p.empty()) out.push_back(num(p));
  }
  if (out.empty()) throw ConfigError(std::string(what) + " is empty");
  return out;
}

std::string fmt(double v) { return detail::format_double(v); }

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Loaded {
  CohortTable cohort;
  MatchedPairSet pairs;
};

Loaded load_data(const Options& opt, Run& run) {
  if (opt.input.empty()) throw ConfigError("--input (cohort CSV) is required");
  if (opt.pairs.empty()) throw ConfigError("--pairs (pair CSV) is required");
  run.input(opt.input);
  run.input(opt.pairs);
  Loaded l;
  l.cohort = load_cohort(opt.input);
  l.pairs = load_pairs(opt.pairs, l.cohort);
  return l;
}

json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::vector<std::size_t> indices_of(const MatchedPairSet& data, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < data.size(); ++i) pos.emplace(data.pairs()[i].pair_id, i);
  std::vector<std::size_t> out;
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw DataError("split references unknown pair '" + id + "'");
    out.push_back(it->second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct SplitFile {
  double discovery_fraction = 0.25;
  std::vector<std::string> discovery_ids, confirmation_ids;
};

SplitFile read_split(const std::string& path, Run& run) {
  run.input(path);
  const auto j = load_json(path);
  SplitFile s;
  s.discovery_fraction = j.at("discovery_fraction").get<double>();
  s.discovery_ids = j.at("discovery_ids").get<std::vector<std::string>>();
  s.confirmation_ids = j.at("confirmation_ids").get<std::vector<std::string>>();
  return s;
}

// Confirmation pairs for inference. Without a split file, or with one, the
// discovery ids are never used unless --unsafe-full-sample is given.
MatchedPairSet inference_sample(const Options& opt, const MatchedPairSet& all, Run& run, json& notes) {
  if (opt.split.empty()) {
    if (!opt.unsafe_full_sample)
      throw ConfigError("honesty guard: pass --split so inference uses the confirmation subsample only "
                        "(or --unsafe-full-sample to test on every pair)");
    notes.push_back("unsafe: inference used the full sample, including any pairs used for discovery");
    return all;
  }
  const auto s = read_split(opt.split, run);
  if (opt.unsafe_full_sample) {
    notes.push_back("unsafe: inference used the full sample, including the discovery subsample");
    return all;
  }
  const std::set<std::string> disc(s.discovery_ids.begin(), s.discovery_ids.end());
  for (const auto& id : s.confirmation_ids)
    if (disc.count(id)) throw DataError("split file lists pair '" + id + "' in both subsamples");
  return all.subset(indices_of(all, s.confirmation_ids));
}

EffectTree read_tree(const std::string& path, Run& run) {
  if (path.empty()) throw ConfigError("--tree is required");
  run.input(path);
  const auto j = load_json(path);
  return EffectTree::from_json(j.contains("tree") ? j["tree"] : j);
}

GrowthConfig growth_config(const Options& opt, GrowthMethod m) {
  auto g = GrowthConfig::defaults_for(m);
  g.min_leaf_pairs = opt.min_leaf;
  g.max_depth = opt.max_depth;
  g.cv_folds = opt.cv_folds;
  if (opt.se_rule >= 0) g.se_rule = opt.se_rule;
  g.seed = mix_seed(opt.seed, 2);
  g.validate();
  return g;
}

json ci_result_json(const CiTestResult& r) {
  json j{{"reject", r.reject},
         {"d_min", r.d_min},
         {"tau_at_min", r.tau_at_min},
         {"kappa", r.kappa},
         {"alpha", r.alpha},
         {"gamma_ci", r.gamma_ci},
         {"gamma", r.gamma},
         {"node_ids", r.node_ids},
         {"deviates_at_min", r.deviates_at_min},
         {"diagnostics", r.diagnostics}};
  if (std::isfinite(r.ci_low)) j["ci"] = {r.ci_low, r.ci_high};
  return j;
}

std::string scan_csv(const CiTestResult& r) {
  std::ostringstream os;
  os << "gamma,tau,d_max,kappa,reject\n";
  for (const auto& p : r.scan)
    os << fmt(r.gamma) << ',' << fmt(p.tau) << ',' << fmt(p.d_max) << ',' << fmt(r.kappa) << ','
       << (p.d_max > r.kappa ? 1 : 0) << '\n';
  return os.str();
}

CiTestResult run_joint(const Assignment& a, const ConversionMatrix& C, double gamma_ci, double alpha, double gamma,
                       const std::vector<int>& subset = {}) {
  if (a.data.outcome_kind() == OutcomeKind::binary)
    return binary_joint_test(BinaryGroups::from(a), C, gamma_ci, alpha, SensitivitySpec(gamma), {}, subset);
  return ci_method_test(GroupedDifferences::from(a), C, gamma_ci, alpha, SensitivitySpec(gamma), {}, subset);
}

Assignment assign_checked(const EffectTree& tree, const MatchedPairSet& sample) {
  auto a = assign_pairs(tree, sample);
  if (!a.diagnostics.empty())
    throw DataError("confirmation sample leaves a terminal node empty (" + a.diagnostics.front() + ")");
  return a;
}

json base_config(const Options& o, const std::string& cmd) {
  return {{"subcommand", cmd},   {"ratio", o.ratio},           {"seed", o.seed},
          {"method", o.method},  {"gamma", o.gamma},           {"gamma_grid", o.gamma_grid},
          {"alpha", o.alpha},    {"gamma_ci", o.gamma_ci},     {"delta_grid", o.delta_grid},
          {"truncation", o.truncation}, {"mc_reps", o.mc_reps}, {"unsafe_full_sample", o.unsafe_full_sample},
          {"exact", o.exact},    {"distance", o.distance},     {"caliper", o.caliper},
          {"nodes", o.nodes},    {"min_leaf", o.min_leaf},     {"max_depth", o.max_depth},
          {"cv_folds", o.cv_folds}, {"se_rule", o.se_rule}, {"outcome", o.outcome},    {"scenario", o.scenario},
          {"reps", o.reps},      {"n_pairs", o.n_pairs},       {"no_test", o.no_test},
          {"emit_data", o.emit_data}};
}

// ---------------------------------------------------------------- commands

void cmd_match(const Options& o, Run& run) {
  if (o.input.empty()) throw ConfigError("--input (cohort CSV) is required");
  run.input(o.input);
  const auto cohort = load_cohort(o.input);
  std::optional<double> cal;
  if (o.caliper >= 0) cal = o.caliper;
  const auto m = greedy_match(cohort, o.exact, o.distance, cal);
  std::ostringstream os;
  save_pairs(m.pairs, os);
  run.write("pairs.csv", os.str());
  run.write_json("match.json", m.summary());
  std::cout << m.pairs.size() << " pairs, " << m.dropped_treated.size() << " treated units unmatched\n";
}

void cmd_balance(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  const auto rep = balance(d.cohort, d.pairs);
  run.write("balance.csv", rep.to_csv());
  run.write_json("balance.json", rep.to_json());
}

void cmd_split(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  const auto plan = split_sample(d.pairs, o.ratio, o.seed);
  run.write_json("split.json", plan.to_json());
  std::cout << plan.discovery_ids.size() << " discovery pairs, " << plan.confirmation_ids.size()
            << " confirmation pairs (discovery count = floor(ratio * pairs))\n";
}

json grown_json(const GrownTree& g, const GrowthConfig& cfg, const Schema& schema) {
  json cv = json::array();
  for (const auto& r : g.cv_table)
    cv.push_back({{"alpha", r.alpha}, {"leaves", r.leaves}, {"cv_risk", r.cv_risk}, {"cv_se", r.cv_se}});
  json desc = json::object();
  for (int id : g.tree.terminal_ids()) desc[std::to_string(id)] = g.tree.describe(id, &schema);
  const auto used = g.tree.covariates_used();
  return {{"method", to_string(cfg.method)},
          {"config", cfg.to_json()},
          {"tree", g.tree.to_json()},
          {"leaves", g.tree.leaf_count()},
          {"leaf_conditions", desc},
          {"covariates_used", std::vector<std::string>(used.begin(), used.end())},
          {"covariates_considered", g.covariates_considered},
          {"chosen_alpha", g.chosen_alpha},
          {"cv_table", cv},
          {"diagnostics", g.diagnostics}};
}

void cmd_discover(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  if (o.split.empty()) throw ConfigError("--split is required: discovery runs on the discovery subsample");
  const auto s = read_split(o.split, run);
  const auto disc = d.pairs.subset(indices_of(d.pairs, s.discovery_ids));
  std::vector<GrowthMethod> methods;
  if (o.method == "both") methods = {GrowthMethod::cart, GrowthMethod::ct};
  else methods = {growth_method_from_string(o.method)};
  json summary{{"trees", json::array()}};
  std::size_t best_leaves = 0;
  std::string best;
  for (auto m : methods) {
    auto cfg = growth_config(o, m);
    cfg.honest_fraction_hint = 1.0 - s.discovery_fraction;
    const auto g = grow_tree(disc, cfg);
    const std::string name = std::string("tree_") + to_string(m) + ".json";
    run.write_json(name, grown_json(g, cfg, d.pairs.schema()));
    summary["trees"].push_back({{"method", to_string(m)}, {"file", name}, {"leaves", g.tree.leaf_count()}});
    if (g.tree.leaf_count() >= best_leaves) {
      best_leaves = g.tree.leaf_count();
      best = to_string(m);
    }
  }
  if (methods.size() > 1) {
    summary["recommended"] = best;
    summary["note"] = "both trees were grown on the same discovery pairs; the larger tree (" + best + ", " +
                      std::to_string(best_leaves) +
                      " leaves) is recommended since the confirmation sample trims spurious splits";
  }
  run.write_json("discover.json", summary);
}

void cmd_test(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  json notes = json::array();
  const auto sample = inference_sample(o, d.pairs, run, notes);
  const auto tree = read_tree(o.tree, run);
  const auto a = assign_checked(tree, sample);
  const auto C = build_conversion_matrix(tree);
  const auto r = run_joint(a, C, o.gamma_ci, o.alpha, o.gamma);
  auto j = ci_result_json(r);
  j["pairs"] = sample.size();
  j["notes"] = notes;
  run.write_json("test.json", j);
  run.write("scan.csv", scan_csv(r));
  std::cout << (r.reject ? "reject" : "do not reject") << ": d_min = " << fmt(r.d_min) << ", kappa = " << fmt(r.kappa)
            << "\n";
}

void cmd_subgroup(const Options& o, Run& run) {
  if (o.nodes.empty()) throw ConfigError("--nodes is required");
  if (!(o.gamma_ci > 0)) throw ConfigError("subgroup tests need --gamma-ci > 0");
  const auto d = load_data(o, run);
  json notes = json::array();
  const auto sample = inference_sample(o, d.pairs, run, notes);
  const auto tree = read_tree(o.tree, run);
  const auto a = assign_checked(tree, sample);
  const auto C = build_conversion_matrix(tree);
  const auto r = run_joint(a, C, o.gamma_ci, o.alpha, o.gamma, o.nodes);
  auto j = ci_result_json(r);
  j["requested_nodes"] = o.nodes;
  j["pairs"] = sample.size();
  j["notes"] = notes;
  run.write_json("subgroup.json", j);
  run.write("subgroup_scan.csv", scan_csv(r));
  std::cout << (r.reject ? "reject" : "do not reject") << ": d_max_sub = " << fmt(r.d_min)
            << ", kappa_sub = " << fmt(r.kappa) << "\n";
}

void cmd_sensitivity(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  json notes = json::array();
  const auto sample = inference_sample(o, d.pairs, run, notes);
  const auto tree = read_tree(o.tree, run);
  const auto a = assign_checked(tree, sample);
  const auto C = build_conversion_matrix(tree);
  const auto grid = parse_grid(o.gamma_grid, "--gamma-grid");
  const bool binary = sample.outcome_kind() == OutcomeKind::binary;
  const auto rep = binary ? binary_sensitivity_sweep(BinaryGroups::from(a), C, grid, o.alpha, o.gamma_ci)
                          : sensitivity_sweep(GroupedDifferences::from(a), C, grid, o.alpha, o.gamma_ci);
  std::ostringstream os;
  os << "gamma,tau,d_max,kappa,reject\n";
  json rows = json::array();
  for (const auto& r : rep.rows) {
    os << fmt(r.gamma) << ',' << fmt(r.tau_at_min) << ',' << fmt(r.d_min) << ',' << fmt(r.kappa) << ','
       << (r.reject ? 1 : 0) << '\n';
    rows.push_back({{"gamma", r.gamma}, {"alpha", r.alpha}, {"gamma_ci", r.gamma_ci}, {"d_min", r.d_min},
                    {"tau_at_min", r.tau_at_min}, {"kappa", r.kappa}, {"reject", r.reject}});
  }
  run.write("sensitivity.csv", os.str());
  json j{{"rows", rows},
         {"breaking_gamma", rep.breaking_gamma ? json(*rep.breaking_gamma) : json(nullptr)},
         {"breaking_at_grid_end", rep.breaking_at_grid_end},
         {"diagnostics", rep.diagnostics},
         {"notes", notes}};

  if (rep.breaking_gamma && !o.delta_grid.empty()) {
    const auto deltas = parse_grid(o.delta_grid, "--delta-grid");
    std::ostringstream am;
    am << "gamma,delta,lambda\n";
    for (const auto& p : amplify(*rep.breaking_gamma, deltas))
      am << fmt(*rep.breaking_gamma) << ',' << fmt(p.delta) << ',' << fmt(p.lambda) << '\n';
    run.write("amplification.csv", am.str());
  }

  if (binary) {
    // Fisher-null table: McNemar upper bounds per leaf and their truncated
    // product, for each Γ on the grid.
    const auto leaves = tree.terminal_ids();
    std::vector<std::vector<BinaryPair>> parts(leaves.size());
    const auto all = binary_pairs(a.data);
    for (std::size_t i = 0; i < all.size(); ++i) parts[(*a.data.group_of_pair())[i]].push_back(all[i]);
    std::ostringstream fn;
    fn << "gamma";
    for (int id : leaves) fn << ",leaf_" << id;
    fn << ",truncated_product\n";
    TruncatedProductOptions tp;
    tp.truncation = o.truncation;
    tp.mc_reps = o.mc_reps;
    tp.seed = mix_seed(o.seed, 3);
    for (double g : grid) {
      std::vector<double> ps;
      for (const auto& p : parts) ps.push_back(mcnemar_upper_p(p, SensitivitySpec(g)).p_upper);
      fn << fmt(g);
      for (double p : ps) fn << ',' << fmt(p);
      fn << ',' << fmt(truncated_product(ps, tp)) << '\n';
    }
    run.write("fisher_null.csv", fn.str());
  } else if (!o.delta_grid.empty() || o.truncation != 0.2) {
    j["notes"].push_back("--truncation applies to binary outcomes only");
  }
  run.write_json("sensitivity.json", j);
  if (rep.breaking_gamma)
    std::cout << "breaking gamma: " << fmt(*rep.breaking_gamma)
              << (rep.breaking_at_grid_end ? " (rejects at the end of the grid)" : "") << "\n";
  else
    std::cout << "breaking gamma: none (no rejection at gamma = 1)\n";
}

void cmd_simulate(const Options& o, Run& run) {
  const auto kind = outcome_kind_from_string(o.outcome);
  Scenario s;
  if (o.scenario == "null") {
    s = Scenario::constant(kind);
  } else {
    if (o.scenario.size() != 2 || o.scenario[0] != 's') throw ConfigError("--scenario must be s1..s5 or null");
    s = Scenario::situation(kind, o.scenario[1] - '0');
  }
  s.replications = o.reps;
  s.n_pairs = o.n_pairs;
  s.seed = o.seed;
  if (o.emit_data) {
    const auto data = generate(s, 0);
    std::ostringstream c, p;
    save_cohort(cohort_of(data), c);
    save_pairs(data, p);
    run.write("cohort.csv", c.str());
    run.write("pairs.csv", p.str());
  }
  std::vector<GrowthMethod> methods;
  if (o.method == "both") methods = {GrowthMethod::cart, GrowthMethod::ct};
  else methods = {growth_method_from_string(o.method)};
  std::vector<SimulationSummary> rows;
  json out = json::array();
  for (auto m : methods) {
    PipelineConfig cfg;
    cfg.discovery_fraction = o.ratio;
    cfg.growth = growth_config(o, m);
    cfg.alpha = o.alpha;
    cfg.gamma_ci = o.gamma_ci;
    cfg.gamma = o.gamma;
    cfg.run_test = !o.no_test;
    const auto r = simulate(s, cfg, o.threads);
    rows.push_back(r);
    out.push_back({{"scenario", s.to_json()},
                   {"pipeline", cfg.to_json()},
                   {"power", cfg.run_test ? json(r.power) : json(nullptr)},
                   {"mc_se", cfg.run_test ? json(r.mc_se) : json(nullptr)},
                   {"discovery_rates", r.discovery_rates},
                   {"covariates", r.covariates},
                   {"mean_leaves", r.mean_leaves}});
  }
  if (!o.no_test) run.write("power.csv", power_table_csv(rows));
  run.write("discovery.csv", discovery_table_csv(rows));
  run.write_json("simulate.json", out);
  for (const auto& r : rows) {
    std::cout << r.scenario << ' ' << r.method;
    if (!o.no_test) std::cout << " power " << fmt(r.power);
    std::cout << " rates";
    for (double v : r.discovery_rates) std::cout << ' ' << fmt(v);
    std::cout << '\n';
  }
}

void cmd_report(const Options& o, Run& run) {
  const auto d = load_data(o, run);
  json notes = json::array();
  const auto sample = inference_sample(o, d.pairs, run, notes);
  const auto tree = read_tree(o.tree, run);
  const auto a = assign_checked(tree, sample);
  const auto C = build_conversion_matrix(tree);
  const auto r = run_joint(a, C, o.gamma_ci, o.alpha, o.gamma);

  const auto leaves = tree.terminal_ids();
  std::vector<double> leaf_sum(leaves.size(), 0.0);
  std::vector<std::size_t> leaf_n(leaves.size(), 0);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const auto g = static_cast<std::size_t>((*a.data.group_of_pair())[i]);
    leaf_sum[g] += a.data.pairs()[i].difference();
    ++leaf_n[g];
  }
  std::map<int, std::size_t> col;
  for (std::size_t c = 0; c < leaves.size(); ++c) col[leaves[c]] = c;

  EffectTree::DotStyle style;
  json nodes = json::array();
  for (int id : tree.preorder()) {
    double sum = 0;
    std::size_t n = 0;
    for (int l : tree.descendant_leaves(id)) {
      sum += leaf_sum[col.at(l)];
      n += leaf_n[col.at(l)];
    }
    const double est = n ? sum / static_cast<double>(n) : 0.0;
    json node{{"id", id}, {"condition", tree.describe(id, &d.pairs.schema())}, {"pairs", n}, {"estimate", est}};
    std::string label = "n = " + std::to_string(n) + "\\nestimate = " + fixed(est, 3);
    auto it = std::find(r.node_ids.begin(), r.node_ids.end(), id);
    if (it != r.node_ids.end()) {
      const double dev = r.deviates_at_min[static_cast<std::size_t>(it - r.node_ids.begin())];
      const bool rej = std::abs(dev) > r.kappa;
      node["deviate"] = dev;
      node["rejected"] = rej;
      style.rejected[id] = rej;
      label += "\\nD = " + fixed(dev, 2);
    }
    style.extra_label[id] = label;
    nodes.push_back(node);
  }
  run.write("report.dot", tree.to_dot(style, &d.pairs.schema()));
  run.write_json("report.json", {{"test", ci_result_json(r)}, {"nodes", nodes}, {"notes", notes}});
}

void print_error(const char* kind, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discovery and confirmation of effect modification in matched pairs"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(hetfx::version));
  Options o;

  auto io = [&](CLI::App* c) {
    c->add_option("--input", o.input, "cohort CSV (id, z, y, covariates)");
    c->add_option("--pairs", o.pairs, "pair CSV (pair_id, role, unit_id)");
    c->add_option("--out-dir", o.out_dir, "directory for artifacts and the manifest");
    c->add_option("--seed", o.seed, "root seed (HETFX_SEED overrides)");
  };
  auto inference = [&](CLI::App* c) {
    c->add_option("--split", o.split, "split.json from the split subcommand");
    c->add_option("--tree", o.tree, "tree JSON from the discover subcommand");
    c->add_option("--gamma", o.gamma, "sensitivity parameter")->check(CLI::Range(1.0, 1e6));
    c->add_option("--alpha", o.alpha, "test level")->check(CLI::Range(0.0, 1.0));
    c->add_option("--gamma-ci", o.gamma_ci, "level spent on the confidence interval")->check(CLI::Range(0.0, 1.0));
    c->add_flag("--unsafe-full-sample", o.unsafe_full_sample, "allow inference on discovery pairs");
  };
  auto growth = [&](CLI::App* c) {
    c->add_option("--method", o.method, "tree method")->check(CLI::IsMember({"cart", "ct", "both"}));
    c->add_option("--min-leaf", o.min_leaf, "minimum pairs per leaf");
    c->add_option("--max-depth", o.max_depth, "maximum tree depth");
    c->add_option("--cv-folds", o.cv_folds, "cross-validation folds");
    c->add_option("--se-rule", o.se_rule, "prune to the simplest tree within this many CV standard errors")
        ->check(CLI::NonNegativeNumber);
  };

  auto* match = app.add_subcommand("match", "greedy within-stratum 1:1 matching");
  io(match);
  match->add_option("--exact", o.exact, "covariates matched exactly")->delimiter(',');
  match->add_option("--distance", o.distance, "covariates in the distance")->delimiter(',');
  match->add_option("--caliper", o.caliper, "maximum scaled distance");

  auto* bal = app.add_subcommand("balance", "standardized differences before and after matching");
  io(bal);

  auto* split = app.add_subcommand("split", "honest split into discovery and confirmation pairs");
  io(split);
  split->add_option("--ratio", o.ratio, "discovery share")->check(CLI::Range(0.0, 1.0));

  auto* discover = app.add_subcommand("discover", "grow a tree on the discovery pairs");
  io(discover);
  growth(discover);
  discover->add_option("--split", o.split, "split.json from the split subcommand");

  auto* test = app.add_subcommand("test", "joint test of effect modification on confirmation pairs");
  io(test);
  inference(test);

  auto* sub = app.add_subcommand("subgroup", "test a set of tree nodes");
  io(sub);
  inference(sub);
  sub->add_option("--nodes", o.nodes, "node ids")->delimiter(',');

  auto* sens = app.add_subcommand("sensitivity", "sweep the sensitivity parameter");
  io(sens);
  inference(sens);
  sens->add_option("--gamma-grid", o.gamma_grid, "start:end:step or a comma list starting at 1");
  sens->add_option("--delta-grid", o.delta_grid, "outcome odds for the amplification of the breaking gamma");
  sens->add_option("--truncation", o.truncation, "truncated product threshold (binary)")->check(CLI::Range(0.0, 1.0));
  sens->add_option("--mc-reps", o.mc_reps, "Monte Carlo draws for the truncated product");

  auto* sim = app.add_subcommand("simulate", "Monte Carlo power and discovery rates");
  sim->add_option("--out-dir", o.out_dir, "directory for artifacts and the manifest");
  sim->add_option("--seed", o.seed, "root seed (HETFX_SEED overrides)");
  growth(sim);
  sim->add_option("--outcome", o.outcome)->check(CLI::IsMember({"continuous", "binary"}));
  sim->add_option("--scenario", o.scenario, "s1..s5 or null");
  sim->add_option("--ratio", o.ratio, "discovery share")->check(CLI::Range(0.0, 1.0));
  sim->add_option("--reps", o.reps, "replications");
  sim->add_option("--n-pairs", o.n_pairs, "pairs per replication");
  sim->add_option("--gamma", o.gamma)->check(CLI::Range(1.0, 1e6));
  sim->add_option("--alpha", o.alpha)->check(CLI::Range(0.0, 1.0));
  sim->add_option("--gamma-ci", o.gamma_ci)->check(CLI::Range(0.0, 1.0));
  sim->add_option("--threads", o.threads, "worker threads (0 = all cores)");
  sim->add_flag("--no-test", o.no_test, "discovery rates only");
  sim->add_flag("--emit-data", o.emit_data, "also write replication 0 as cohort.csv and pairs.csv");

  auto* report = app.add_subcommand("report", "DOT rendering of the tree with estimates and rejections");
  io(report);
  inference(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("config", e.what());
    return 2;
  }

  if (const char* env = std::getenv("HETFX_SEED")) {
    try {
      o.seed = std::stoull(env);
    } catch (const std::exception&) {
      print_error("config", std::string("HETFX_SEED is not an unsigned integer: '") + env + "'");
      return 2;
    }
  }

  auto* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    Run run(name, o, base_config(o, name));
    if (name == "match") cmd_match(o, run);
    else if (name == "balance") cmd_balance(o, run);
    else if (name == "split") cmd_split(o, run);
    else if (name == "discover") cmd_discover(o, run);
    else if (name == "test") cmd_test(o, run);
    else if (name == "subgroup") cmd_subgroup(o, run);
    else if (name == "sensitivity") cmd_sensitivity(o, run);
    else if (name == "simulate") cmd_simulate(o, run);
    else if (name == "report") cmd_report(o, run);
    run.finish();
  } catch (const hetfx::Error& e) {
    print_error(e.kind(), e.what());
    return e.exit_code();
  } catch (const json::exception& e) {
    print_error("config", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    print_error("data", e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("numeric", e.what());
    return 4;
  }
  return 0;
}
