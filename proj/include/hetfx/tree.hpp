#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hetfx/core.hpp"
#include "json.hpp"

namespace hetfx {

// A binary split. Numeric: value <= threshold goes left (ties left).
// Categorical: value in left_levels goes left.
struct Split {
  enum class Kind { threshold, category };

  std::string covariate;
  Kind kind = Kind::threshold;
  double threshold = 0.0;
  std::vector<int> left_levels;  // sorted

  bool goes_left(double value) const {
    if (kind == Kind::threshold) return value <= threshold;
    const int level = static_cast<int>(std::lround(value));
    return std::binary_search(left_levels.begin(), left_levels.end(), level);
  }

  bool operator==(const Split&) const = default;
};

struct TreeNode {
  int id = 0;
  int parent = -1;
  int depth = 0;
  std::optional<Split> split;
  int left = -1;
  int right = -1;

  bool is_leaf() const { return left < 0; }
};

class EffectTree {
 public:
  EffectTree() { nodes_.push_back(TreeNode{}); }

  // Turns leaf `node` into an internal node; returns {left, right} ids.
  std::pair<int, int> add_split(int node, Split split) {
    check_id(node);
    if (!nodes_[node].is_leaf()) throw ConfigError("node already split");
    const int l = static_cast<int>(nodes_.size());
    const int r = l + 1;
    const int depth = nodes_[node].depth + 1;
    nodes_[node].split = std::move(split);
    nodes_[node].left = l;
    nodes_[node].right = r;
    nodes_.push_back(TreeNode{l, node, depth, std::nullopt, -1, -1});
    nodes_.push_back(TreeNode{r, node, depth, std::nullopt, -1, -1});
    return {l, r};
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int id) const {
    check_id(id);
    return nodes_[id];
  }
  static constexpr int root() { return 0; }

  // Leaves in left-to-right order (the G columns of the conversion matrix).
  std::vector<int> terminal_ids() const {
    std::vector<int> out;
    for (int id : preorder())
      if (nodes_[id].is_leaf()) out.push_back(id);
    return out;
  }

  // Non-root internal nodes in preorder (G - 2 of them).
  std::vector<int> internal_ids() const {
    std::vector<int> out;
    for (int id : preorder())
      if (id != root() && !nodes_[id].is_leaf()) out.push_back(id);
    return out;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  std::vector<int> preorder() const {
    std::vector<int> out;
    std::vector<int> stack{root()};
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      out.push_back(id);
      if (!nodes_[id].is_leaf()) {
        stack.push_back(nodes_[id].right);
        stack.push_back(nodes_[id].left);
      }
    }
    return out;
  }

  std::vector<int> descendant_leaves(int id) const {
    check_id(id);
    std::vector<int> out;
    std::vector<int> stack{id};
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      if (nodes_[n].is_leaf()) {
        out.push_back(n);
      } else {
        stack.push_back(nodes_[n].right);
        stack.push_back(nodes_[n].left);
      }
    }
    return out;
  }

  // Leaf reached by a covariate vector laid out per `schema`.
  int route(const std::vector<double>& x, const Schema& schema) const {
    int id = root();
    while (!nodes_[id].is_leaf()) {
      const Split& s = *nodes_[id].split;
      const std::size_t c = schema.index_of(s.covariate);
      id = s.goes_left(x.at(c)) ? nodes_[id].left : nodes_[id].right;
    }
    return id;
  }

  std::set<std::string> covariates_used() const {
    std::set<std::string> out;
    for (const auto& n : nodes_)
      if (n.split) out.insert(n.split->covariate);
    return out;
  }

  // Human-readable path condition, e.g. "male > 0.5 & age in {4}".
  std::string describe(int id, const Schema* schema = nullptr) const {
    check_id(id);
    std::vector<std::string> parts;
    int child = id;
    for (int p = nodes_[id].parent; p >= 0; child = p, p = nodes_[p].parent) {
      parts.push_back(condition(nodes_[p], nodes_[p].left == child, schema));
    }
    if (parts.empty()) return "all";
    std::reverse(parts.begin(), parts.end());
    std::string out = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) out += " & " + parts[i];
    return out;
  }

  static std::string condition(const TreeNode& parent, bool left, const Schema* schema) {
    const Split& s = *parent.split;
    if (s.kind == Split::Kind::threshold) {
      return s.covariate + (left ? " <= " : " > ") + format_number(s.threshold);
    }
    std::string levels;
    std::vector<std::string> labels;
    const CovariateSpec* spec = nullptr;
    if (schema) {
      if (auto c = schema->find(s.covariate)) spec = &schema->covariates[*c];
    }
    for (int l : s.left_levels) {
      if (spec && l >= 0 && static_cast<std::size_t>(l) < spec->levels.size())
        labels.push_back(spec->levels[l]);
      else
        labels.push_back(std::to_string(l));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) levels += (i ? "," : "") + labels[i];
    return s.covariate + (left ? " in {" : " not in {") + levels + "}";
  }

  static std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  nlohmann::json to_json() const {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : nodes_) {
      nlohmann::json j;
      j["id"] = n.id;
      j["parent"] = n.parent < 0 ? nlohmann::json(nullptr) : nlohmann::json(n.parent);
      j["depth"] = n.depth;
      if (n.split) {
        nlohmann::json s;
        s["covariate"] = n.split->covariate;
        if (n.split->kind == Split::Kind::threshold) {
          s["kind"] = "threshold";
          s["threshold"] = n.split->threshold;
        } else {
          s["kind"] = "category";
          s["left_levels"] = n.split->left_levels;
        }
        j["split"] = s;
        j["children"] = {n.left, n.right};
      } else {
        j["split"] = nullptr;
        j["children"] = nlohmann::json::array();
      }
      nodes.push_back(j);
    }
    return nlohmann::json{{"nodes", nodes},
                          {"terminal_ids", terminal_ids()},
                          {"internal_ids", internal_ids()}};
  }

  static EffectTree from_json(const nlohmann::json& j) {
    if (!j.contains("nodes") || !j["nodes"].is_array() || j["nodes"].empty())
      throw ConfigError("tree JSON must contain a non-empty 'nodes' array");
    const auto& arr = j["nodes"];
    std::map<int, const nlohmann::json*> by_id;
    for (const auto& n : arr) by_id[n.at("id").get<int>()] = &n;
    if (!by_id.count(0)) throw ConfigError("tree JSON has no root node 0");
    EffectTree tree;
    // Rebuild in breadth-first order so ids are reassigned deterministically
    // and match the source when it was produced by this class.
    std::vector<std::pair<int, int>> queue{{0, 0}};  // (source id, new id)
    for (std::size_t q = 0; q < queue.size(); ++q) {
      auto [src, dst] = queue[q];
      const auto& n = *by_id.at(src);
      if (n.contains("split") && !n["split"].is_null()) {
        const auto& s = n["split"];
        Split split;
        split.covariate = s.at("covariate").get<std::string>();
        const std::string kind = s.value("kind", "threshold");
        if (kind == "threshold") {
          split.kind = Split::Kind::threshold;
          split.threshold = s.at("threshold").get<double>();
        } else if (kind == "category") {
          split.kind = Split::Kind::category;
          split.left_levels = s.at("left_levels").get<std::vector<int>>();
          std::sort(split.left_levels.begin(), split.left_levels.end());
        } else {
          throw ConfigError("unknown split kind '" + kind + "'");
        }
        const auto ch = n.at("children").get<std::vector<int>>();
        if (ch.size() != 2) throw ConfigError("split node must have exactly 2 children");
        auto [l, r] = tree.add_split(dst, std::move(split));
        if (!by_id.count(ch[0]) || !by_id.count(ch[1]))
          throw ConfigError("tree JSON references a missing child node");
        queue.push_back({ch[0], l});
        queue.push_back({ch[1], r});
      }
    }
    if (queue.size() != arr.size()) throw ConfigError("tree JSON contains unreachable nodes");
    return tree;
  }

  struct DotStyle {
    std::map<int, std::string> extra_label;  // appended under the node title
    std::map<int, bool> rejected;            // solid when true, dashed when false
  };

  std::string to_dot(const DotStyle& style = {}, const Schema* schema = nullptr) const {
    std::ostringstream os;
    os << "digraph effect_tree {\n  node [shape=box];\n";
    for (int id : preorder()) {
      const auto& n = nodes_[id];
      std::string label = id == root() ? "total sample" : "node " + std::to_string(id);
      if (auto it = style.extra_label.find(id); it != style.extra_label.end())
        label += "\\n" + it->second;
      os << "  n" << id << " [label=\"" << escape(label) << "\"";
      if (auto it = style.rejected.find(id); it != style.rejected.end())
        os << ", style=" << (it->second ? "solid" : "dashed");
      os << "];\n";
      if (!n.is_leaf()) {
        os << "  n" << id << " -> n" << n.left << " [label=\""
           << escape(condition(n, true, schema)) << "\"];\n";
        os << "  n" << id << " -> n" << n.right << " [label=\""
           << escape(condition(n, false, schema)) << "\"];\n";
      }
    }
    os << "}\n";
    return os.str();
  }

 private:
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '"') out += "\\\"";
      else out += c;
    }
    return out;
  }

  void check_id(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw ConfigError("unknown tree node id " + std::to_string(id));
  }

  std::vector<TreeNode> nodes_;
};

// (2G-2) x G 0/1 matrix; rows are non-root internal nodes in preorder, then
// leaves left to right. Columns are leaves left to right.
struct ConversionMatrix {
  std::vector<std::vector<int>> entries;
  std::vector<int> row_labels;
  std::vector<int> col_labels;

  std::size_t rows() const { return entries.size(); }
  std::size_t cols() const { return col_labels.size(); }

  template <class T>
  std::vector<T> apply(const std::vector<T>& leaf_values) const {
    if (leaf_values.size() != cols()) throw ConfigError("conversion matrix column mismatch");
    std::vector<T> out(rows(), T{});
    for (std::size_t r = 0; r < rows(); ++r)
      for (std::size_t c = 0; c < cols(); ++c)
        if (entries[r][c]) out[r] += leaf_values[c];
    return out;
  }
};

inline ConversionMatrix build_conversion_matrix(const EffectTree& tree) {
  const auto leaves = tree.terminal_ids();
  if (leaves.size() < 2) throw ConfigError("degenerate tree: at least two leaves are required");
  std::map<int, std::size_t> col_of;
  for (std::size_t c = 0; c < leaves.size(); ++c) col_of[leaves[c]] = c;

  ConversionMatrix m;
  m.col_labels = leaves;
  m.row_labels = tree.internal_ids();
  m.row_labels.insert(m.row_labels.end(), leaves.begin(), leaves.end());
  for (int id : m.row_labels) {
    std::vector<int> row(leaves.size(), 0);
    for (int leaf : tree.descendant_leaves(id)) row[col_of.at(leaf)] = 1;
    m.entries.push_back(std::move(row));
  }
  return m;
}

struct Assignment {
  MatchedPairSet data;            // group_of_pair holds column indices 0..G-1
  std::vector<std::size_t> leaf_sizes;
  std::vector<std::string> diagnostics;
};

inline Assignment assign_pairs(const EffectTree& tree, const MatchedPairSet& data) {
  for (const auto& name : tree.covariates_used()) data.schema().index_of(name);
  const auto leaves = tree.terminal_ids();
  std::map<int, int> col_of;
  for (std::size_t c = 0; c < leaves.size(); ++c) col_of[leaves[c]] = static_cast<int>(c);

  std::vector<int> groups;
  groups.reserve(data.size());
  std::vector<std::size_t> sizes(leaves.size(), 0);
  for (const auto& p : data.pairs()) {
    const int lt = tree.route(p.treated.covariates, data.schema());
    const int lc = tree.route(p.control.covariates, data.schema());
    if (lt != lc) throw DataError("pair '" + p.pair_id + "' is not routable: its units fall in different leaves");
    const int g = col_of.at(lt);
    groups.push_back(g);
    ++sizes[g];
  }
  Assignment out{data.with_groups(std::move(groups)), sizes, {}};
  for (std::size_t c = 0; c < leaves.size(); ++c)
    if (sizes[c] == 0) out.diagnostics.push_back("empty leaf: node " + std::to_string(leaves[c]));
  return out;
}

}  // namespace hetfx
