#pragma once

// Undirected neighbourhood graphs: adjacency-file parsing, connected
// components and edge removal around selected nodes.
//
// Node indices are 0-based everywhere in the library. The adjacency file
// format is 1-based; conversion happens in parse_graph / serialize_graph.

#include <algorithm>
#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "icar/error.hpp"

namespace icar {

using Edge = std::pair<std::size_t, std::size_t>;

class Graph {
 public:
  Graph() = default;

  // Builds a graph from 0-based undirected edges. Rejects self-loops,
  // duplicates (in either orientation) and out-of-range endpoints.
  Graph(std::size_t n, const std::vector<Edge>& edges) : neighbours_(n) {
    require(n > 0, "graph must have at least one node");
    for (auto [i, j] : edges) {
      require(i < n && j < n, "edge endpoint out of range");
      require(i != j, "self-loop on node " + std::to_string(i + 1));
      neighbours_[i].push_back(j);
      neighbours_[j].push_back(i);
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& nb = neighbours_[i];
      std::sort(nb.begin(), nb.end());
      require(std::adjacent_find(nb.begin(), nb.end()) == nb.end(),
              "duplicate edge at node " + std::to_string(i + 1));
    }
  }

  std::size_t size() const { return neighbours_.size(); }
  std::size_t degree(std::size_t i) const { return neighbours_[i].size(); }
  const std::vector<std::size_t>& neighbours(std::size_t i) const { return neighbours_[i]; }

  std::size_t edge_count() const {
    std::size_t twice = 0;
    for (const auto& nb : neighbours_) twice += nb.size();
    return twice / 2;
  }

  // Edges with i < j, sorted lexicographically.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j : neighbours_[i])
        if (i < j) out.emplace_back(i, j);
    return out;
  }

  bool adjacent(std::size_t i, std::size_t j) const {
    const auto& nb = neighbours_[i];
    return std::binary_search(nb.begin(), nb.end(), j);
  }

  friend bool operator==(const Graph&, const Graph&) = default;

 private:
  std::vector<std::vector<std::size_t>> neighbours_;
};

struct ComponentPartition {
  std::vector<std::size_t> labels;      // component id per node
  std::vector<std::size_t> sizes;       // nodes per component
  std::vector<std::size_t> singletons;  // nodes in size-1 components, ascending

  std::size_t count() const { return sizes.size(); }

  std::size_t non_singleton_count() const {
    return static_cast<std::size_t>(
        std::count_if(sizes.begin(), sizes.end(), [](std::size_t s) { return s > 1; }));
  }

  // Nodes of component k in ascending order.
  std::vector<std::size_t> members(std::size_t k) const {
    std::vector<std::size_t> out;
    out.reserve(sizes.at(k));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == k) out.push_back(i);
    return out;
  }
};

// Component ids follow the smallest node index they contain.
inline ComponentPartition connected_components(const Graph& g) {
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  ComponentPartition p;
  p.labels.assign(g.size(), unset);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < g.size(); ++start) {
    if (p.labels[start] != unset) continue;
    const std::size_t id = p.sizes.size();
    std::size_t count = 0;
    p.labels[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      ++count;
      for (std::size_t v : g.neighbours(u)) {
        if (p.labels[v] == unset) {
          p.labels[v] = id;
          stack.push_back(v);
        }
      }
    }
    p.sizes.push_back(count);
    if (count == 1) p.singletons.push_back(start);
  }
  return p;
}

// Removes every edge touching one of `nodes`; the node count is unchanged.
inline Graph isolate_nodes(const Graph& g, const std::vector<std::size_t>& nodes) {
  std::vector<bool> drop(g.size(), false);
  for (std::size_t i : nodes) {
    require(i < g.size(), "isolate: node " + std::to_string(i + 1) + " out of range");
    drop[i] = true;
  }
  std::vector<Edge> kept;
  for (auto [i, j] : g.edges())
    if (!drop[i] && !drop[j]) kept.emplace_back(i, j);
  return Graph(g.size(), kept);
}

// Adjacency-list format: a line with n, then one line per node
// "i k j1 ... jk" (1-based). Every edge must be listed from both ends.
inline Graph parse_graph(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> InputError {
    return InputError("graph line " + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };

  if (!next_line()) throw InputError("graph: empty input");
  long long n_raw = 0;
  {
    std::istringstream hs(line);
    std::string extra;
    if (!(hs >> n_raw) || (hs >> extra) || n_raw <= 0) throw fail("malformed header, expected node count");
  }
  const auto n = static_cast<std::size_t>(n_raw);

  std::vector<std::vector<std::size_t>> listed(n);
  std::vector<bool> seen(n, false);
  for (std::size_t row = 0; row < n; ++row) {
    if (!next_line()) throw fail("expected " + std::to_string(n) + " node lines, got " + std::to_string(row));
    std::istringstream ls(line);
    long long node = 0, k = 0;
    if (!(ls >> node >> k)) throw fail("malformed node line");
    if (node < 1 || static_cast<std::size_t>(node) > n) throw fail("node index " + std::to_string(node) + " out of range");
    if (k < 0) throw fail("negative neighbour count");
    const auto i = static_cast<std::size_t>(node - 1);
    if (seen[i]) throw fail("node " + std::to_string(node) + " listed twice");
    seen[i] = true;
    for (long long t = 0; t < k; ++t) {
      long long j = 0;
      if (!(ls >> j)) throw fail("expected " + std::to_string(k) + " neighbours for node " + std::to_string(node));
      if (j < 1 || static_cast<std::size_t>(j) > n) throw fail("neighbour index " + std::to_string(j) + " out of range");
      if (j == node) throw fail("self-loop on node " + std::to_string(node));
      listed[i].push_back(static_cast<std::size_t>(j - 1));
    }
    std::string extra;
    if (ls >> extra) throw fail("trailing tokens after neighbour list");
    auto sorted = listed[i];
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw fail("duplicate neighbour entry for node " + std::to_string(node));
    listed[i] = std::move(sorted);
  }
  if (next_line()) throw fail("unexpected content after " + std::to_string(n) + " node lines");

  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : listed[i]) {
      if (!std::binary_search(listed[j].begin(), listed[j].end(), i))
        throw InputError("graph: asymmetric listing, node " + std::to_string(i + 1) + " lists " +
                         std::to_string(j + 1) + " but not vice versa");
      if (i < j) edges.emplace_back(i, j);
    }
  }
  return Graph(n, edges);
}

inline Graph parse_graph(const std::string& text) {
  std::istringstream in(text);
  return parse_graph(in);
}

inline void serialize_graph(const Graph& g, std::ostream& out) {
  out << g.size() << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    out << (i + 1) << ' ' << g.degree(i);
    for (std::size_t j : g.neighbours(i)) out << ' ' << (j + 1);
    out << '\n';
  }
}

inline std::string serialize_graph(const Graph& g) {
  std::ostringstream out;
  serialize_graph(g, out);
  return out.str();
}

}  // namespace icar
