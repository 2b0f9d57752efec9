#pragma once

#include <cstdint>
#include <vector>

#include "qf/random.hpp"

namespace qf {

inline constexpr int kMaxCanonicalVertices = 11;

// Small undirected simple graph stored as adjacency bitmasks (n <= 11 for the
// canonical-form routines, whose certificates pack the C(n,2) pair bits into 64 bits).
struct SmallGraph {
  int n = 0;
  std::vector<std::uint32_t> adj;

  explicit SmallGraph(int vertices = 0) : n(vertices), adj(static_cast<std::size_t>(vertices), 0) {}

  void add_edge(int u, int v) {
    adj[static_cast<std::size_t>(u)] |= 1u << v;
    adj[static_cast<std::size_t>(v)] |= 1u << u;
  }
  bool has_edge(int u, int v) const { return (adj[static_cast<std::size_t>(u)] >> v) & 1u; }
  int edge_count() const;
  bool operator==(const SmallGraph&) const = default;
};

bool is_connected(const SmallGraph& g);

// Applies a relabeling: vertex v of g becomes perm[v].
SmallGraph relabel(const SmallGraph& g, const std::vector<int>& perm);

// Upper-triangle adjacency bits in the given vertex order (order[i] is the
// vertex placed at slot i), most significant bit first.
std::uint64_t adjacency_certificate(const SmallGraph& g, const std::vector<int>& order);

// Isomorphism-invariant certificate: equal iff the graphs are isomorphic.
// Individualization-refinement search with automorphism pruning.
std::uint64_t canonical_form(const SmallGraph& g);

// Draws a graph whose isomorphism class is uniform over all unlabeled graphs on
// n vertices (Dixon-Wilf: pick a permutation cycle type with probability
// proportional to the number of graphs it fixes, then a uniform fixed graph).
SmallGraph sample_unlabeled_graph(int n, Rng& rng);

// Number of isomorphism classes of connected graphs on n vertices (n <= 11).
std::uint64_t connected_class_count(int n);

}  // namespace qf
