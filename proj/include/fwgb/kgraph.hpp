#pragma once

// Expert knowledge graph of constituent elements: charges are leaf nodes and
// every edge carries the element text that separates its two sides.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "fwgb/common.hpp"

namespace fwgb::kgraph {

enum class NodeKind { root, internal, charge };

inline std::string to_string(NodeKind k) {
  switch (k) {
    case NodeKind::root: return "root";
    case NodeKind::internal: return "internal";
    case NodeKind::charge: return "charge";
  }
  return "?";
}

struct Node {
  std::string id;
  NodeKind kind = NodeKind::internal;
  std::optional<std::string> charge;

  bool operator==(const Node&) const = default;
};

struct Edge {
  std::string from;
  std::string to;
  std::string element;

  bool operator==(const Edge&) const = default;
};

struct ChargeGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  bool operator==(const ChargeGraph&) const = default;

  // Nodes sorted by id, edges by (from, to).
  ChargeGraph canonical() const {
    ChargeGraph g = *this;
    std::sort(g.nodes.begin(), g.nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) {
      return std::tie(a.from, a.to, a.element) < std::tie(b.from, b.to, b.element);
    });
    return g;
  }

  std::vector<std::string> charges() const {
    std::vector<std::string> out;
    for (const auto& n : nodes) {
      if (n.kind == NodeKind::charge && n.charge) out.push_back(*n.charge);
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

struct ElementSet {
  std::string charge;
  std::vector<std::string> elements;  // root-to-leaf order
};

// Every violated invariant, one human-readable line each. Empty means valid.
inline std::vector<std::string> validate_graph(const ChargeGraph& g) {
  std::vector<std::string> violations;
  std::map<std::string, const Node*> by_id;
  for (const auto& n : g.nodes) {
    if (n.id.empty()) violations.push_back("node with empty id");
    if (!by_id.emplace(n.id, &n).second) violations.push_back("duplicate node id '" + n.id + "'");
    if (n.kind == NodeKind::charge && (!n.charge || n.charge->empty())) {
      violations.push_back("charge node '" + n.id + "' has no charge label");
    }
    if (n.kind != NodeKind::charge && n.charge) {
      violations.push_back(to_string(n.kind) + " node '" + n.id + "' carries a charge label");
    }
  }

  std::vector<const Node*> roots;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::root) roots.push_back(&n);
  }
  if (roots.empty()) violations.push_back("graph has no root node");
  if (roots.size() > 1) violations.push_back("graph has " + std::to_string(roots.size()) + " root nodes");

  std::map<std::string, std::vector<const Edge*>> out_edges;
  std::map<std::string, int> in_degree;
  for (const auto& e : g.edges) {
    bool ok = true;
    for (const auto* end : {&e.from, &e.to}) {
      if (!by_id.contains(*end)) {
        violations.push_back("edge " + e.from + " -> " + e.to + " references unknown node '" + *end + "'");
        ok = false;
      }
    }
    if (e.element.empty()) violations.push_back("edge " + e.from + " -> " + e.to + " has empty element text");
    if (!ok) continue;
    out_edges[e.from].push_back(&e);
    ++in_degree[e.to];
    if (by_id.at(e.from)->kind == NodeKind::charge) {
      violations.push_back("charge node '" + e.from + "' has an outgoing edge");
    }
    if (by_id.at(e.to)->kind == NodeKind::root) violations.push_back("edge " + e.from + " -> " + e.to + " enters the root");
  }

  // Cycle detection over the whole graph (colour DFS in id order).
  std::map<std::string, int> colour;
  std::vector<std::string> stack;
  std::function<bool(const std::string&)> dfs = [&](const std::string& v) -> bool {
    colour[v] = 1;
    stack.push_back(v);
    for (const auto* e : out_edges[v]) {
      if (colour[e->to] == 1) {
        auto start = std::find(stack.begin(), stack.end(), e->to);
        std::string cyc;
        for (auto it = start; it != stack.end(); ++it) cyc += *it + " -> ";
        violations.push_back("cycle: " + cyc + e->to);
        return true;
      }
      if (colour[e->to] == 0 && dfs(e->to)) return true;
    }
    stack.pop_back();
    colour[v] = 2;
    return false;
  };
  bool cyclic = false;
  for (const auto& [id, node] : by_id) {
    if (colour[id] == 0 && dfs(id)) {
      cyclic = true;
      break;
    }
  }

  std::map<std::string, int> label_count;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::charge && n.charge && !n.charge->empty()) ++label_count[*n.charge];
  }
  for (const auto& [label, count] : label_count) {
    if (count > 1) violations.push_back("charge '" + label + "' appears on " + std::to_string(count) + " leaves");
  }

  if (roots.size() == 1 && !cyclic) {
    std::set<std::string> reached;
    std::vector<std::string> frontier{roots.front()->id};
    while (!frontier.empty()) {
      auto v = frontier.back();
      frontier.pop_back();
      if (!reached.insert(v).second) continue;
      for (const auto* e : out_edges[v]) frontier.push_back(e->to);
    }
    for (const auto& n : g.nodes) {
      if (n.kind != NodeKind::charge) continue;
      if (!reached.contains(n.id)) {
        violations.push_back("charge node '" + n.id + "' is unreachable from the root");
      }
    }
    // A unique root-to-leaf path requires in-degree 1 along every reachable node.
    for (const auto& id : reached) {
      if (in_degree[id] > 1) {
        violations.push_back("node '" + id + "' has " + std::to_string(in_degree[id]) +
                             " parents; charge paths must be unique");
      }
    }
  }
  return violations;
}

// Element texts of the unique root-to-leaf path ending at `charge`.
inline ElementSet collect_elements(const ChargeGraph& g, const std::string& charge) {
  const Node* leaf = nullptr;
  for (const auto& n : g.nodes) {
    if (n.kind == NodeKind::charge && n.charge == charge) leaf = &n;
  }
  if (!leaf) throw DataError("charge '" + charge + "' is not in the knowledge graph");

  std::multimap<std::string, const Edge*> parent_edge;
  for (const auto& e : g.edges) parent_edge.emplace(e.to, &e);
  std::map<std::string, NodeKind> kind;
  for (const auto& n : g.nodes) kind[n.id] = n.kind;

  ElementSet out{charge, {}};
  std::string v = leaf->id;
  while (kind[v] != NodeKind::root) {
    auto [first, last] = parent_edge.equal_range(v);
    if (first == last) throw DataError("charge '" + charge + "' is unreachable from the root");
    if (std::next(first) != last) throw DataError("node '" + v + "' has several parents");
    out.elements.push_back(first->second->element);
    v = first->second->from;
    if (out.elements.size() > g.edges.size()) throw DataError("cycle above charge '" + charge + "'");
  }
  std::reverse(out.elements.begin(), out.elements.end());
  return out;
}

inline nlohmann::ordered_json to_json(const ChargeGraph& g) {
  nlohmann::ordered_json j;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : g.nodes) {
    nlohmann::ordered_json node;
    node["id"] = n.id;
    node["kind"] = to_string(n.kind);
    if (n.charge) node["charge"] = *n.charge;
    j["nodes"].push_back(node);
  }
  j["edges"] = nlohmann::ordered_json::array();
  for (const auto& e : g.edges) {
    j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"element", e.element}});
  }
  return j;
}

// Parses without validating.
inline ChargeGraph parse_graph(const nlohmann::json& j) {
  auto str = [](const nlohmann::json& obj, const char* key, const char* what) {
    auto it = obj.find(key);
    if (it == obj.end() || !it->is_string()) {
      throw DataError(std::string(what) + " entry needs a string \"" + key + "\"");
    }
    return it->get<std::string>();
  };
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges") || !j["nodes"].is_array() ||
      !j["edges"].is_array()) {
    throw DataError("graph JSON must be an object with \"nodes\" and \"edges\" arrays");
  }
  ChargeGraph g;
  for (const auto& jn : j["nodes"]) {
    Node n;
    n.id = str(jn, "id", "node");
    auto kind = str(jn, "kind", "node");
    if (kind == "root") {
      n.kind = NodeKind::root;
    } else if (kind == "internal") {
      n.kind = NodeKind::internal;
    } else if (kind == "charge") {
      n.kind = NodeKind::charge;
    } else {
      throw DataError("node '" + n.id + "' has unknown kind '" + kind + "'");
    }
    if (jn.contains("charge")) n.charge = str(jn, "charge", "node");
    g.nodes.push_back(std::move(n));
  }
  for (const auto& je : j["edges"]) {
    g.edges.push_back({str(je, "from", "edge"), str(je, "to", "edge"), str(je, "element", "edge")});
  }
  return g;
}

// Parses and validates; any violation is an error.
inline ChargeGraph load_graph_json(const nlohmann::json& j) {
  auto g = parse_graph(j);
  auto violations = validate_graph(g);
  if (!violations.empty()) {
    std::string msg = "invalid knowledge graph:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw DataError(msg);
  }
  return g;
}

inline ChargeGraph load_graph(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
  return load_graph_json(j);
}

inline void save_graph(const std::filesystem::path& path, const ChargeGraph& g) {
  write_file_atomic(path, to_json(g.canonical()).dump(2) + "\n");
}

// Identifies a graph by its canonical serialization.
inline std::string graph_hash(const ChargeGraph& g) { return sha256_hex(to_json(g.canonical()).dump()); }

}  // namespace fwgb::kgraph
