#include "qf/graph_canon.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "qf/error.hpp"

namespace qf {

int SmallGraph::edge_count() const {
  int total = 0;
  for (auto row : adj) total += std::popcount(row);
  return total / 2;
}

bool is_connected(const SmallGraph& g) {
  if (g.n <= 1) return true;
  std::uint32_t seen = 1u;
  std::uint32_t frontier = 1u;
  while (frontier != 0) {
    std::uint32_t next = 0;
    for (int v = 0; v < g.n; ++v) {
      if ((frontier >> v) & 1u) next |= g.adj[static_cast<std::size_t>(v)];
    }
    frontier = next & ~seen;
    seen |= next;
  }
  return std::popcount(seen) == g.n;
}

SmallGraph relabel(const SmallGraph& g, const std::vector<int>& perm) {
  SmallGraph out(g.n);
  for (int u = 0; u < g.n; ++u) {
    for (int v = u + 1; v < g.n; ++v) {
      if (g.has_edge(u, v)) out.add_edge(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
    }
  }
  return out;
}

std::uint64_t adjacency_certificate(const SmallGraph& g, const std::vector<int>& order) {
  std::uint64_t cert = 0;
  const int n = g.n;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      cert = (cert << 1) | (g.has_edge(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]) ? 1u : 0u);
    }
  }
  return cert;
}

namespace {

using Cells = std::vector<std::vector<int>>;

// Equitable refinement: split every cell by the vector of neighbour counts into
// each current cell until stable. Depends only on structure and cell order.
void refine(const SmallGraph& g, Cells& cells) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<std::uint32_t> masks(cells.size(), 0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      for (int v : cells[c]) masks[c] |= 1u << v;
    }
    Cells next;
    next.reserve(cells.size());
    for (const auto& cell : cells) {
      if (cell.size() == 1) {
        next.push_back(cell);
        continue;
      }
      std::vector<std::pair<std::vector<int>, int>> keyed;
      keyed.reserve(cell.size());
      for (int v : cell) {
        std::vector<int> counts(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
          counts[c] = std::popcount(g.adj[static_cast<std::size_t>(v)] & masks[c]);
        }
        keyed.emplace_back(std::move(counts), v);
      }
      std::sort(keyed.begin(), keyed.end());
      std::vector<int> group{keyed.front().second};
      for (std::size_t i = 1; i < keyed.size(); ++i) {
        if (keyed[i].first != keyed[i - 1].first) {
          next.push_back(std::move(group));
          group.clear();
          changed = true;
        }
        group.push_back(keyed[i].second);
      }
      next.push_back(std::move(group));
    }
    cells = std::move(next);
  }
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

class CanonicalSearch {
 public:
  explicit CanonicalSearch(const SmallGraph& g) : g_(g) {}

  std::uint64_t run() {
    Cells cells{std::vector<int>(static_cast<std::size_t>(g_.n))};
    std::iota(cells[0].begin(), cells[0].end(), 0);
    visit(std::move(cells), {});
    return best_;
  }

 private:
  void record_automorphism(const std::vector<int>& from, const std::vector<int>& to) {
    std::vector<int> gamma(static_cast<std::size_t>(g_.n));
    for (std::size_t i = 0; i < from.size(); ++i) gamma[static_cast<std::size_t>(from[i])] = to[i];
    automorphisms_.push_back(std::move(gamma));
  }

  void leaf(const Cells& cells) {
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(g_.n));
    for (const auto& cell : cells) order.push_back(cell.front());
    const std::uint64_t cert = adjacency_certificate(g_, order);
    if (!have_first_) {
      have_first_ = true;
      first_cert_ = cert;
      first_order_ = order;
    } else if (cert == first_cert_) {
      record_automorphism(first_order_, order);
    }
    if (!have_best_ || cert < best_) {
      have_best_ = true;
      best_ = cert;
      best_order_ = order;
    } else if (cert == best_ && order != best_order_) {
      record_automorphism(best_order_, order);
    }
  }

  void visit(Cells cells, std::vector<int> prefix) {
    refine(g_, cells);
    auto target = std::find_if(cells.begin(), cells.end(), [](const auto& c) { return c.size() > 1; });
    if (target == cells.end()) {
      leaf(cells);
      return;
    }
    const auto target_index = static_cast<std::size_t>(target - cells.begin());
    std::vector<int> candidates = cells[target_index];
    std::sort(candidates.begin(), candidates.end());
    std::vector<int> explored;
    for (int w : candidates) {
      if (!explored.empty()) {
        // Orbits of the known automorphisms that fix the prefix pointwise.
        UnionFind orbits(g_.n);
        for (const auto& gamma : automorphisms_) {
          const bool fixes = std::all_of(prefix.begin(), prefix.end(), [&](int p) {
            return gamma[static_cast<std::size_t>(p)] == p;
          });
          if (!fixes) continue;
          for (int v = 0; v < g_.n; ++v) orbits.unite(v, gamma[static_cast<std::size_t>(v)]);
        }
        const int root = orbits.find(w);
        const bool equivalent = std::any_of(explored.begin(), explored.end(), [&](int u) { return orbits.find(u) == root; });
        if (equivalent) continue;
      }
      explored.push_back(w);
      Cells child;
      child.reserve(cells.size() + 1);
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (c != target_index) {
          child.push_back(cells[c]);
          continue;
        }
        child.push_back({w});
        std::vector<int> rest;
        for (int v : cells[c]) {
          if (v != w) rest.push_back(v);
        }
        child.push_back(std::move(rest));
      }
      auto child_prefix = prefix;
      child_prefix.push_back(w);
      visit(std::move(child), std::move(child_prefix));
    }
  }

  const SmallGraph& g_;
  bool have_first_ = false;
  std::uint64_t first_cert_ = 0;
  std::vector<int> first_order_;
  bool have_best_ = false;
  std::uint64_t best_ = 0;
  std::vector<int> best_order_;
  std::vector<std::vector<int>> automorphisms_;
};

struct CycleType {
  std::vector<int> lengths;
  double weight = 0.0;  // (#permutations of this type) * 2^(#orbits on pairs)
};

void enumerate_partitions(int remaining, int max_part, std::vector<int>& current, std::vector<std::vector<int>>& out) {
  if (remaining == 0) {
    out.push_back(current);
    return;
  }
  for (int part = std::min(remaining, max_part); part >= 1; --part) {
    current.push_back(part);
    enumerate_partitions(remaining - part, part, current, out);
    current.pop_back();
  }
}

std::vector<CycleType> build_cycle_types(int n) {
  std::vector<std::vector<int>> partitions;
  std::vector<int> current;
  enumerate_partitions(n, n, current, partitions);
  double factorial = 1.0;
  for (int i = 2; i <= n; ++i) factorial *= i;
  std::vector<CycleType> types;
  for (const auto& lengths : partitions) {
    double denom = 1.0;
    std::vector<int> multiplicity(static_cast<std::size_t>(n) + 1, 0);
    for (int k : lengths) ++multiplicity[static_cast<std::size_t>(k)];
    for (int k = 1; k <= n; ++k) {
      const int m = multiplicity[static_cast<std::size_t>(k)];
      for (int i = 0; i < m; ++i) denom *= k * (i + 1);
    }
    int pair_orbits = 0;
    for (std::size_t a = 0; a < lengths.size(); ++a) {
      pair_orbits += lengths[a] / 2;
      for (std::size_t b = a + 1; b < lengths.size(); ++b) pair_orbits += std::gcd(lengths[a], lengths[b]);
    }
    types.push_back({lengths, factorial / denom * std::ldexp(1.0, pair_orbits)});
  }
  return types;
}

const std::vector<CycleType>& cycle_types(int n) {
  static const std::vector<std::vector<CycleType>> table = [] {
    std::vector<std::vector<CycleType>> t;
    for (int k = 0; k <= kMaxCanonicalVertices; ++k) t.push_back(build_cycle_types(k));
    return t;
  }();
  return table[static_cast<std::size_t>(n)];
}

}  // namespace

std::uint64_t canonical_form(const SmallGraph& g) {
  require(g.n <= kMaxCanonicalVertices, ErrorKind::kContract, "canonical_form supports at most 11 vertices");
  if (g.n <= 1) return 0;
  return CanonicalSearch(g).run();
}

SmallGraph sample_unlabeled_graph(int n, Rng& rng) {
  require(n >= 0 && n <= kMaxCanonicalVertices, ErrorKind::kContract, "sample_unlabeled_graph supports at most 11 vertices");
  const auto& types = cycle_types(n);
  double total = 0.0;
  for (const auto& t : types) total += t.weight;
  double r = rng.uniform() * total;
  const CycleType* chosen = &types.back();
  for (const auto& t : types) {
    if (r < t.weight) {
      chosen = &t;
      break;
    }
    r -= t.weight;
  }
  std::vector<int> perm(static_cast<std::size_t>(n));
  int offset = 0;
  for (int len : chosen->lengths) {
    for (int i = 0; i < len; ++i) perm[static_cast<std::size_t>(offset + i)] = offset + (i + 1) % len;
    offset += len;
  }
  SmallGraph g(n);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n * n), 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (seen[static_cast<std::size_t>(i * n + j)]) continue;
      std::vector<std::pair<int, int>> orbit;
      int a = i;
      int b = j;
      while (!seen[static_cast<std::size_t>(std::min(a, b) * n + std::max(a, b))]) {
        seen[static_cast<std::size_t>(std::min(a, b) * n + std::max(a, b))] = 1;
        orbit.emplace_back(a, b);
        a = perm[static_cast<std::size_t>(a)];
        b = perm[static_cast<std::size_t>(b)];
      }
      if (rng.bernoulli(0.5)) {
        for (auto [u, v] : orbit) g.add_edge(u, v);
      }
    }
  }
  return g;
}

std::uint64_t connected_class_count(int n) {
  // OEIS A001349.
  static constexpr std::uint64_t kCounts[] = {1, 1, 1, 2, 6, 21, 112, 853, 11117, 261080, 11716571, 1006700565};
  require(n >= 0 && n <= kMaxCanonicalVertices, ErrorKind::kContract, "connected_class_count supports n <= 11");
  return kCounts[n];
}

}  // namespace qf
