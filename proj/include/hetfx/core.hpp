#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hetfx {

inline constexpr const char* version = "0.1.0";

// Errors carry the category that the CLI maps onto exit codes
// (2 config, 3 data, 4 numeric).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 1; }
  virtual const char* kind() const noexcept { return "error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
  const char* kind() const noexcept override { return "config"; }
};

class DataError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
  const char* kind() const noexcept override { return "data"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
  const char* kind() const noexcept override { return "numeric"; }
};

enum class OutcomeKind { continuous, binary };
enum class CovariateKind { binary, numeric, categorical };

inline const char* to_string(OutcomeKind k) {
  return k == OutcomeKind::binary ? "binary" : "continuous";
}

inline const char* to_string(CovariateKind k) {
  switch (k) {
    case CovariateKind::binary: return "binary";
    case CovariateKind::numeric: return "numeric";
    case CovariateKind::categorical: return "categorical";
  }
  return "numeric";
}

inline CovariateKind covariate_kind_from_string(const std::string& s) {
  if (s == "binary") return CovariateKind::binary;
  if (s == "numeric") return CovariateKind::numeric;
  if (s == "categorical") return CovariateKind::categorical;
  throw ConfigError("unknown covariate kind '" + s + "'");
}

inline OutcomeKind outcome_kind_from_string(const std::string& s) {
  if (s == "binary") return OutcomeKind::binary;
  if (s == "continuous") return OutcomeKind::continuous;
  throw ConfigError("unknown outcome kind '" + s + "'");
}

struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::numeric;
  // Categorical values are stored as indices into this list.
  std::vector<std::string> levels;

  bool operator==(const CovariateSpec&) const = default;
};

struct Schema {
  std::vector<CovariateSpec> covariates;
  OutcomeKind outcome = OutcomeKind::continuous;

  std::size_t size() const { return covariates.size(); }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < covariates.size(); ++i)
      if (covariates[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw DataError("unknown covariate '" + name + "'");
  }

  bool operator==(const Schema&) const = default;
};

struct ObservationRecord {
  std::string unit_id;
  bool treated = false;
  double outcome = 0.0;
  std::vector<double> covariates;

  bool operator==(const ObservationRecord&) const = default;
};

struct MatchedPair {
  std::string pair_id;
  ObservationRecord treated;
  ObservationRecord control;

  // Within-pair difference, treated minus control.
  double difference() const { return treated.outcome - control.outcome; }
  bool operator==(const MatchedPair&) const = default;
};

// Treated/control pairs sharing one schema. `group_of_pair` is filled in by
// assign_pairs once a tree exists.
class MatchedPairSet {
 public:
  MatchedPairSet() = default;
  MatchedPairSet(Schema schema, std::vector<MatchedPair> pairs)
      : schema_(std::move(schema)), pairs_(std::move(pairs)) {
    validate();
  }

  const Schema& schema() const { return schema_; }
  const std::vector<MatchedPair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  std::size_t unit_count() const { return 2 * pairs_.size(); }
  OutcomeKind outcome_kind() const { return schema_.outcome; }

  const std::optional<std::vector<int>>& group_of_pair() const { return groups_; }

  MatchedPairSet with_groups(std::vector<int> groups) const {
    if (groups.size() != pairs_.size())
      throw DataError("group assignment length does not match pair count");
    MatchedPairSet out = *this;
    out.groups_ = std::move(groups);
    return out;
  }

  MatchedPairSet subset(const std::vector<std::size_t>& indices) const {
    std::vector<MatchedPair> picked;
    picked.reserve(indices.size());
    std::vector<int> g;
    for (auto i : indices) {
      if (i >= pairs_.size()) throw DataError("pair index out of range");
      picked.push_back(pairs_[i]);
      if (groups_) g.push_back((*groups_)[i]);
    }
    MatchedPairSet out(schema_, std::move(picked));
    if (groups_) out.groups_ = std::move(g);
    return out;
  }

  std::vector<double> differences() const {
    std::vector<double> d;
    d.reserve(pairs_.size());
    for (const auto& p : pairs_) d.push_back(p.difference());
    return d;
  }

 private:
  void validate() const {
    const std::size_t k = schema_.size();
    for (const auto& p : pairs_) {
      if (!p.treated.treated || p.control.treated)
        throw DataError("pair '" + p.pair_id + "' must hold one treated and one control unit");
      if (p.treated.covariates.size() != k || p.control.covariates.size() != k)
        throw DataError("pair '" + p.pair_id + "' covariate vector does not match schema");
      if (schema_.outcome == OutcomeKind::binary) {
        for (double y : {p.treated.outcome, p.control.outcome})
          if (y != 0.0 && y != 1.0)
            throw DataError("pair '" + p.pair_id + "' has a non-binary outcome");
      }
    }
  }

  Schema schema_;
  std::vector<MatchedPair> pairs_;
  std::optional<std::vector<int>> groups_;
};

// splitmix64; used to derive independent seeds from one root seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace hetfx
