#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "hetfx/core.hpp"
#include "hetfx/discovery.hpp"
#include "json.hpp"

namespace hetfx {

struct CohortTable {
  Schema schema;
  std::vector<ObservationRecord> rows;

  bool operator==(const CohortTable& o) const {
    if (rows != o.rows || schema.outcome != o.schema.outcome || schema.size() != o.schema.size()) return false;
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const auto &a = schema.covariates[c], &b = o.schema.covariates[c];
      if (a.name != b.name || a.kind != b.kind || a.levels != b.levels) return false;
    }
    return true;
  }

  std::size_t treated_count() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](auto& r) { return r.treated; }));
  }
};

struct CsvOptions {
  char delimiter = ',';
  std::string id_column = "id";
  std::string treated_column = "z";
  std::string outcome_column = "y";
  std::optional<OutcomeKind> outcome_kind;           // detected when empty
  std::map<std::string, CovariateKind> kinds;        // per-covariate overrides
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

inline std::optional<double> parse_number(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string quote_field(const std::string& s, char delim) {
  if (s.find(delim) == std::string::npos && s.find('"') == std::string::npos && s.find('\n') == std::string::npos)
    return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

}  // namespace detail

// Reads a cohort CSV. Header names may carry a kind annotation, as in
// "age:numeric"; otherwise kinds are inferred (all 0/1 → binary, all
// numbers → numeric, anything else → categorical with sorted levels).
inline CohortTable load_cohort(std::istream& in, const CsvOptions& opt = {}) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty cohort file: missing header");
  const auto header = detail::split_csv_line(line, opt.delimiter);
  int id_col = -1, z_col = -1, y_col = -1;
  std::vector<int> cov_cols;
  std::vector<std::string> names;
  std::vector<std::optional<CovariateKind>> declared;
  for (std::size_t i = 0; i < header.size(); ++i) {
    std::string name = header[i];
    std::optional<CovariateKind> kind;
    if (auto colon = name.find(':'); colon != std::string::npos) {
      kind = covariate_kind_from_string(name.substr(colon + 1));
      name = name.substr(0, colon);
    }
    if (name == opt.id_column) id_col = static_cast<int>(i);
    else if (name == opt.treated_column) z_col = static_cast<int>(i);
    else if (name == opt.outcome_column) y_col = static_cast<int>(i);
    else {
      if (std::find(names.begin(), names.end(), name) != names.end())
        throw DataError("duplicate column '" + name + "' in header");
      cov_cols.push_back(static_cast<int>(i));
      names.push_back(name);
      if (auto it = opt.kinds.find(name); it != opt.kinds.end()) kind = it->second;
      declared.push_back(kind);
    }
  }
  if (id_col < 0 || z_col < 0 || y_col < 0)
    throw DataError("header must contain '" + opt.id_column + "', '" + opt.treated_column + "' and '" +
                    opt.outcome_column + "' columns");

  struct Raw {
    std::string id;
    bool z;
    double y;
    std::vector<std::string> cov;
  };
  std::vector<Raw> raw;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line, opt.delimiter);
    const std::string where = "line " + std::to_string(line_no);
    if (f.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                      std::to_string(f.size()));
    Raw r;
    r.id = f[id_col];
    if (r.id.empty()) throw DataError(where + ": missing unit id");
    if (!seen.insert(r.id).second) throw DataError(where + ": duplicate unit id '" + r.id + "'");
    const auto z = detail::parse_number(f[z_col]);
    if (!z || (*z != 0.0 && *z != 1.0)) throw DataError(where + ": treated flag must be 0 or 1");
    r.z = *z == 1.0;
    const auto y = detail::parse_number(f[y_col]);
    if (!y) throw DataError(where + ": missing or non-numeric outcome");
    r.y = *y;
    for (int c : cov_cols) {
      if (f[c].empty()) throw DataError(where + ": missing value for '" + header[c] + "'");
      r.cov.push_back(f[c]);
    }
    raw.push_back(std::move(r));
  }

  CohortTable t;
  bool all_binary = true;
  for (const auto& r : raw) all_binary = all_binary && (r.y == 0.0 || r.y == 1.0);
  t.schema.outcome = opt.outcome_kind.value_or(all_binary && !raw.empty() ? OutcomeKind::binary
                                                                           : OutcomeKind::continuous);
  if (t.schema.outcome == OutcomeKind::binary && !all_binary)
    throw DataError("outcome declared binary but holds values other than 0 and 1");

  for (std::size_t c = 0; c < names.size(); ++c) {
    CovariateSpec spec;
    spec.name = names[c];
    bool numeric = true, binary = true;
    for (const auto& r : raw) {
      const auto v = detail::parse_number(r.cov[c]);
      if (!v) numeric = binary = false;
      else if (*v != 0.0 && *v != 1.0) binary = false;
    }
    spec.kind = declared[c].value_or(binary ? CovariateKind::binary
                                            : numeric ? CovariateKind::numeric : CovariateKind::categorical);
    if (spec.kind == CovariateKind::categorical) {
      std::set<std::string> lv;
      for (const auto& r : raw) lv.insert(r.cov[c]);
      spec.levels.assign(lv.begin(), lv.end());
    } else if (!numeric) {
      throw DataError("covariate '" + spec.name + "' declared " + to_string(spec.kind) + " but holds non-numeric values");
    } else if (spec.kind == CovariateKind::binary && !binary) {
      throw DataError("covariate '" + spec.name + "' declared binary but holds values other than 0 and 1");
    }
    t.schema.covariates.push_back(std::move(spec));
  }
  for (auto& r : raw) {
    ObservationRecord o;
    o.unit_id = r.id;
    o.treated = r.z;
    o.outcome = r.y;
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& spec = t.schema.covariates[c];
      if (spec.kind == CovariateKind::categorical) {
        auto it = std::lower_bound(spec.levels.begin(), spec.levels.end(), r.cov[c]);
        o.covariates.push_back(static_cast<double>(it - spec.levels.begin()));
      } else {
        o.covariates.push_back(*detail::parse_number(r.cov[c]));
      }
    }
    t.rows.push_back(std::move(o));
  }
  return t;
}

inline CohortTable load_cohort(const std::string& path, const CsvOptions& opt = {}) {
  auto in = detail::open_input(path);
  return load_cohort(in, opt);
}

// Writes the cohort with kind-annotated headers so that loading it back
// reproduces the same table.
inline void save_cohort(const CohortTable& t, std::ostream& out, const CsvOptions& opt = {}) {
  const char d = opt.delimiter;
  out << opt.id_column << d << opt.treated_column << d << opt.outcome_column;
  for (const auto& c : t.schema.covariates) out << d << detail::quote_field(c.name + ":" + to_string(c.kind), d);
  out << '\n';
  for (const auto& r : t.rows) {
    out << detail::quote_field(r.unit_id, d) << d << (r.treated ? 1 : 0) << d << detail::format_double(r.outcome);
    for (std::size_t c = 0; c < t.schema.size(); ++c) {
      const auto& spec = t.schema.covariates[c];
      out << d;
      if (spec.kind == CovariateKind::categorical)
        out << detail::quote_field(spec.levels.at(static_cast<std::size_t>(std::lround(r.covariates[c]))), d);
      else
        out << detail::format_double(r.covariates[c]);
    }
    out << '\n';
  }
}

inline void save_cohort(const CohortTable& t, const std::string& path, const CsvOptions& opt = {}) {
  auto out = detail::open_output(path);
  save_cohort(t, out, opt);
}

// Pair file: pair_id, role (T or C), unit_id.
inline MatchedPairSet load_pairs(std::istream& in, const CohortTable& cohort) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < cohort.rows.size(); ++i) by_id.emplace(cohort.rows[i].unit_id, i);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty pair file: missing header");
  const auto h = detail::split_csv_line(line, ',');
  if (h.size() != 3 || h[0] != "pair_id" || h[1] != "role" || h[2] != "unit_id")
    throw DataError("pair file header must be 'pair_id,role,unit_id'");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::pair<std::optional<std::size_t>, std::optional<std::size_t>>> members;
  std::unordered_set<std::string> used;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line, ',');
    const std::string where = "pair file line " + std::to_string(line_no);
    if (f.size() != 3) throw DataError(where + ": expected 3 fields");
    auto it = by_id.find(f[2]);
    if (it == by_id.end()) throw DataError(where + ": unknown unit '" + f[2] + "'");
    if (!used.insert(f[2]).second) throw DataError(where + ": unit '" + f[2] + "' appears in two pairs");
    if (!members.count(f[0])) order.push_back(f[0]);
    auto& m = members[f[0]];
    if (f[1] == "T") {
      if (m.first) throw DataError(where + ": pair '" + f[0] + "' has two treated units");
      if (!cohort.rows[it->second].treated) throw DataError(where + ": unit '" + f[2] + "' is not treated");
      m.first = it->second;
    } else if (f[1] == "C") {
      if (m.second) throw DataError(where + ": pair '" + f[0] + "' has two control units");
      if (cohort.rows[it->second].treated) throw DataError(where + ": unit '" + f[2] + "' is treated");
      m.second = it->second;
    } else {
      throw DataError(where + ": role must be T or C");
    }
  }
  std::vector<MatchedPair> pairs;
  for (const auto& id : order) {
    const auto& m = members[id];
    if (!m.first || !m.second) throw DataError("pair '" + id + "' is incomplete");
    pairs.push_back({id, cohort.rows[*m.first], cohort.rows[*m.second]});
  }
  return MatchedPairSet(cohort.schema, std::move(pairs));
}

inline MatchedPairSet load_pairs(const std::string& path, const CohortTable& cohort) {
  auto in = detail::open_input(path);
  return load_pairs(in, cohort);
}

inline void save_pairs(const MatchedPairSet& pairs, std::ostream& out) {
  out << "pair_id,role,unit_id\n";
  for (const auto& p : pairs.pairs()) {
    out << detail::quote_field(p.pair_id, ',') << ",T," << detail::quote_field(p.treated.unit_id, ',') << '\n';
    out << detail::quote_field(p.pair_id, ',') << ",C," << detail::quote_field(p.control.unit_id, ',') << '\n';
  }
}

inline void save_pairs(const MatchedPairSet& pairs, const std::string& path) {
  auto out = detail::open_output(path);
  save_pairs(pairs, out);
}

// Cohort holding exactly the units of a pair set.
inline CohortTable cohort_of(const MatchedPairSet& pairs) {
  CohortTable t;
  t.schema = pairs.schema();
  for (const auto& p : pairs.pairs()) {
    t.rows.push_back(p.treated);
    t.rows.push_back(p.control);
  }
  return t;
}

struct MatchResult {
  MatchedPairSet pairs;
  std::vector<std::string> dropped_treated;
  std::vector<std::string> warnings;
  std::vector<double> distances;

  nlohmann::json summary() const {
    return {{"pairs", pairs.size()},
            {"dropped_treated", dropped_treated},
            {"warnings", warnings}};
  }
};

// Within each exact stratum, treated units in id order take the nearest
// unmatched control (Euclidean distance on covariates scaled by their
// cohort standard deviation). Treated units without a control inside the
// caliper are dropped.
inline MatchResult greedy_match(const CohortTable& cohort, const std::vector<std::string>& exact_on,
                                const std::vector<std::string>& distance_on,
                                std::optional<double> caliper = std::nullopt) {
  if (caliper && *caliper < 0) throw ConfigError("caliper must be nonnegative");
  std::vector<std::size_t> ex, dist;
  for (const auto& n : exact_on) {
    const auto c = cohort.schema.index_of(n);
    if (cohort.schema.covariates[c].kind == CovariateKind::numeric)
      throw ConfigError("exact matching needs a binary or categorical covariate, '" + n + "' is numeric");
    ex.push_back(c);
  }
  for (const auto& n : distance_on) {
    const auto c = cohort.schema.index_of(n);
    if (cohort.schema.covariates[c].kind != CovariateKind::numeric &&
        cohort.schema.covariates[c].kind != CovariateKind::binary)
      throw ConfigError("distance matching needs a numeric covariate, '" + n + "' is categorical");
    dist.push_back(c);
  }
  const std::size_t nt = cohort.treated_count();
  if (nt == 0 || nt == cohort.rows.size()) throw DataError("cohort needs at least one treated and one control unit");

  std::vector<double> scale(dist.size(), 1.0);
  for (std::size_t k = 0; k < dist.size(); ++k) {
    double m = 0, s = 0;
    for (const auto& r : cohort.rows) m += r.covariates[dist[k]];
    m /= static_cast<double>(cohort.rows.size());
    for (const auto& r : cohort.rows) s += (r.covariates[dist[k]] - m) * (r.covariates[dist[k]] - m);
    s = cohort.rows.size() > 1 ? std::sqrt(s / static_cast<double>(cohort.rows.size() - 1)) : 0.0;
    if (s > 0) scale[k] = s;
  }

  std::map<std::vector<double>, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> strata;
  for (std::size_t i = 0; i < cohort.rows.size(); ++i) {
    std::vector<double> key;
    for (auto c : ex) key.push_back(cohort.rows[i].covariates[c]);
    auto& s = strata[key];
    (cohort.rows[i].treated ? s.first : s.second).push_back(i);
  }
  auto by_id = [&](std::size_t a, std::size_t b) {
    return natural_less(cohort.rows[a].unit_id, cohort.rows[b].unit_id);
  };

  MatchResult res;
  std::vector<MatchedPair> pairs;
  std::size_t next_id = 1;
  for (auto& [key, s] : strata) {
    auto& [treated, controls] = s;
    std::sort(treated.begin(), treated.end(), by_id);
    std::sort(controls.begin(), controls.end(), by_id);
    if (treated.empty() || controls.empty()) {
      std::ostringstream os;
      os << "stratum (";
      for (std::size_t k = 0; k < key.size(); ++k) os << (k ? "," : "") << exact_on[k] << "=" << key[k];
      os << ") has " << treated.size() << " treated and " << controls.size() << " controls";
      res.warnings.push_back(os.str());
    }
    std::vector<char> taken(controls.size(), 0);
    for (auto t : treated) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t pick = controls.size();
      for (std::size_t j = 0; j < controls.size(); ++j) {
        if (taken[j]) continue;
        double d2 = 0;
        for (std::size_t k = 0; k < dist.size(); ++k) {
          const double v = (cohort.rows[t].covariates[dist[k]] - cohort.rows[controls[j]].covariates[dist[k]]) / scale[k];
          d2 += v * v;
        }
        if (d2 < best) {
          best = d2;
          pick = j;
        }
      }
      const double d = std::sqrt(best);
      if (pick == controls.size() || (caliper && d > *caliper)) {
        res.dropped_treated.push_back(cohort.rows[t].unit_id);
        continue;
      }
      taken[pick] = 1;
      pairs.push_back({std::to_string(next_id++), cohort.rows[t], cohort.rows[controls[pick]]});
      res.distances.push_back(d);
    }
  }
  res.pairs = MatchedPairSet(cohort.schema, std::move(pairs));
  return res;
}

struct BalanceRow {
  std::string covariate;  // "name" or "name=level" for categorical levels
  double treated_mean_before = 0;
  double control_mean_before = 0;
  double treated_mean_after = 0;
  double control_mean_after = 0;
  double sd_before = 0;
  double std_diff_before = 0;
  double std_diff_after = 0;
  bool infinite_before = false;
  bool infinite_after = false;
};

struct BalanceReport {
  std::vector<BalanceRow> rows;
  std::size_t treated_before = 0, control_before = 0, pairs = 0;

  std::string to_csv() const {
    std::ostringstream os;
    os << "covariate,treated_mean_before,control_mean_before,treated_mean_after,control_mean_after,"
          "sd_before,std_diff_before,std_diff_after\n";
    for (const auto& r : rows)
      os << detail::quote_field(r.covariate, ',') << ',' << detail::format_double(r.treated_mean_before) << ','
         << detail::format_double(r.control_mean_before) << ',' << detail::format_double(r.treated_mean_after) << ','
         << detail::format_double(r.control_mean_after) << ',' << detail::format_double(r.sd_before) << ','
         << detail::format_double(r.std_diff_before) << ',' << detail::format_double(r.std_diff_after) << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    auto num = [](double v) -> nlohmann::json {
      if (std::isfinite(v)) return v;
      return v > 0 ? "inf" : "-inf";
    };
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({{"covariate", r.covariate},
                    {"treated_mean_before", r.treated_mean_before},
                    {"control_mean_before", r.control_mean_before},
                    {"treated_mean_after", r.treated_mean_after},
                    {"control_mean_after", r.control_mean_after},
                    {"sd_before", r.sd_before},
                    {"std_diff_before", num(r.std_diff_before)},
                    {"std_diff_after", num(r.std_diff_after)},
                    {"infinite_before", r.infinite_before},
                    {"infinite_after", r.infinite_after}});
    return {{"treated_before", treated_before}, {"control_before", control_before}, {"pairs", pairs}, {"rows", rs}};
  }
};

namespace detail {

inline void mean_var(const std::vector<double>& v, double& m, double& s2) {
  m = 0;
  s2 = 0;
  if (v.empty()) return;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) s2 += (x - m) * (x - m);
  s2 = v.size() > 1 ? s2 / static_cast<double>(v.size() - 1) : 0.0;
}

inline double standardized(double diff, double s, bool& infinite) {
  infinite = false;
  if (s > 0) return diff / s;
  if (diff == 0) return 0.0;
  infinite = true;
  return diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
}

}  // namespace detail

// Standardized differences before and after matching, both scaled by the
// before-matching pooled standard deviation sqrt((s_T^2 + s_C^2) / 2).
inline BalanceReport balance(const CohortTable& cohort, const MatchedPairSet& pairs) {
  BalanceReport rep;
  rep.treated_before = cohort.treated_count();
  rep.control_before = cohort.rows.size() - rep.treated_before;
  rep.pairs = pairs.size();
  auto add = [&](const std::string& label, auto value) {
    std::vector<double> tb, cb, ta, ca;
    for (const auto& r : cohort.rows) (r.treated ? tb : cb).push_back(value(r));
    for (const auto& p : pairs.pairs()) {
      ta.push_back(value(p.treated));
      ca.push_back(value(p.control));
    }
    BalanceRow row;
    row.covariate = label;
    double vt, vc, dummy;
    detail::mean_var(tb, row.treated_mean_before, vt);
    detail::mean_var(cb, row.control_mean_before, vc);
    detail::mean_var(ta, row.treated_mean_after, dummy);
    detail::mean_var(ca, row.control_mean_after, dummy);
    row.sd_before = std::sqrt(0.5 * (vt + vc));
    row.std_diff_before = detail::standardized(row.treated_mean_before - row.control_mean_before, row.sd_before,
                                               row.infinite_before);
    row.std_diff_after = detail::standardized(row.treated_mean_after - row.control_mean_after, row.sd_before,
                                              row.infinite_after);
    rep.rows.push_back(row);
  };
  for (std::size_t c = 0; c < cohort.schema.size(); ++c) {
    const auto& spec = cohort.schema.covariates[c];
    if (spec.kind == CovariateKind::categorical) {
      for (std::size_t l = 0; l < spec.levels.size(); ++l)
        add(spec.name + "=" + spec.levels[l], [c, l](const ObservationRecord& r) {
          return std::lround(r.covariates[c]) == static_cast<long>(l) ? 1.0 : 0.0;
        });
    } else {
      add(spec.name, [c](const ObservationRecord& r) { return r.covariates[c]; });
    }
  }
  return rep;
}

}  // namespace hetfx
