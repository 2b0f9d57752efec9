#include "oracles.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

namespace oracle {

using namespace qf;

namespace {

using u128 = unsigned __int128;

u128 to_int(const std::vector<std::uint8_t>& bits) {
  u128 v = 0;
  for (std::size_t i = bits.size(); i-- > 0;) v = (v << 1) | bits[i];
  return v;
}

std::vector<std::string> to_bits(u128 v, std::size_t width) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < width; ++i) out.push_back(((v >> i) & 1) ? "1" : "0");
  return out;
}

std::vector<std::string> names(const std::vector<int>& vs) {
  std::vector<std::string> out;
  for (int v : vs) out.push_back("v" + std::to_string(v + 1));
  return out;
}

std::vector<std::vector<bool>> matrix(const GraphPayload& g) {
  std::vector<std::vector<bool>> m(g.num_vertices, std::vector<bool>(g.num_vertices, false));
  for (const auto& e : g.edges) m[e.u][e.v] = m[e.v][e.u] = true;
  return m;
}

std::vector<int> bfs(const GraphPayload& g) {
  const auto m = matrix(g);
  std::vector<int> queue{g.start};
  std::vector<bool> seen(g.num_vertices, false);
  seen[g.start] = true;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    for (int v = 0; v < g.num_vertices; ++v) {
      if (m[queue[head]][v] && !seen[v]) {
        seen[v] = true;
        queue.push_back(v);
      }
    }
  }
  return queue;
}

std::vector<int> dfs(const GraphPayload& g) {
  const auto m = matrix(g);
  std::vector<int> stack{g.start}, order;
  std::vector<bool> done(g.num_vertices, false);
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    if (done[u]) continue;
    done[u] = true;
    order.push_back(u);
    for (int v = g.num_vertices - 1; v >= 0; --v) {
      if (m[u][v] && !done[v]) stack.push_back(v);
    }
  }
  return order;
}

void all_paths(const std::vector<std::vector<bool>>& m, int target, std::vector<int>& path, std::vector<bool>& on,
               std::vector<int>& best) {
  if (!best.empty() && path.size() >= best.size()) return;
  const int u = path.back();
  if (u == target) {
    best = path;
    return;
  }
  for (int v = 0; v < static_cast<int>(m.size()); ++v) {
    if (!m[u][v] || on[v]) continue;
    on[v] = true;
    path.push_back(v);
    all_paths(m, target, path, on, best);
    path.pop_back();
    on[v] = false;
  }
}

// Enumeration in increasing neighbour order finds, among paths of each
// length, the lexicographically smallest first; pruning keeps strictly shorter ones.
std::vector<int> shortest(const GraphPayload& g) {
  const auto m = matrix(g);
  std::vector<int> path{g.start}, best;
  std::vector<bool> on(g.num_vertices, false);
  on[g.start] = true;
  all_paths(m, g.finish, path, on, best);
  return best;
}

std::vector<int> topo(const GraphPayload& g) {
  const int n = g.num_vertices;
  std::vector<bool> placed(n, false);
  std::vector<int> order;
  for (int k = 0; k < n; ++k) {
    for (int v = 0; v < n; ++v) {
      if (placed[v]) continue;
      bool ready = true;
      for (const auto& e : g.edges) ready = ready && !(e.v == v && !placed[e.u]);
      if (ready) {
        placed[v] = true;
        order.push_back(v);
        break;
      }
    }
  }
  return order;
}

bool spanning(int n, const std::vector<Edge>& edges) {
  std::vector<int> comp(n);
  std::iota(comp.begin(), comp.end(), 0);
  for (const auto& e : edges) {
    const int a = comp[e.u], b = comp[e.v];
    if (a == b) return false;
    for (auto& c : comp) {
      if (c == a) c = b;
    }
  }
  return true;
}

std::vector<std::string> mst(const GraphPayload& g) {
  const int n = g.num_vertices;
  std::vector<Edge> best;
  if (n <= 7) {
    // Every (n-1)-edge subset.
    const int m = static_cast<int>(g.edges.size());
    int best_w = -1;
    int ties = 0;
    std::vector<bool> sel(m, false);
    std::fill(sel.end() - (n - 1), sel.end(), true);
    do {
      std::vector<Edge> t;
      int w = 0;
      for (int i = 0; i < m; ++i) {
        if (sel[i]) {
          t.push_back(g.edges[i]);
          w += g.edges[i].weight;
        }
      }
      if (!spanning(n, t)) continue;
      if (best_w < 0 || w < best_w) {
        best_w = w;
        best = t;
        ties = 1;
      } else if (w == best_w) {
        ++ties;
      }
    } while (std::next_permutation(sel.begin(), sel.end()));
    if (ties != 1) throw std::runtime_error("oracle: minimum spanning tree not unique");
  } else {
    // Prim from vertex 0.
    std::vector<bool> in(n, false);
    in[0] = true;
    for (int k = 1; k < n; ++k) {
      const Edge* pick = nullptr;
      for (const auto& e : g.edges) {
        if (in[e.u] == in[e.v]) continue;
        if (!pick || e.weight < pick->weight) pick = &e;
      }
      best.push_back(*pick);
      in[pick->u] = in[pick->v] = true;
    }
  }
  for (auto& e : best) {
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(best.begin(), best.end(),
            [](const Edge& a, const Edge& b) { return std::tie(a.weight, a.u, a.v) < std::tie(b.weight, b.u, b.v); });
  std::vector<std::string> out;
  for (const auto& e : best) {
    out.push_back("v" + std::to_string(e.u + 1));
    out.push_back("v" + std::to_string(e.v + 1));
  }
  return out;
}

std::vector<std::string> max_subarray(const std::vector<int>& k) {
  const int n = static_cast<int>(k.size());
  int bi = 0, bj = 0, bs = k[0];
  for (int i = 0; i < n; ++i) {
    int s = 0;
    for (int j = i; j < n; ++j) {
      s += k[j];
      if (s > bs) {
        bs = s;
        bi = i;
        bj = j;
      }
    }
  }
  std::vector<std::string> out;
  for (int i = bi; i <= bj; ++i) out.push_back(std::to_string(k[i]));
  return out;
}

std::vector<std::string> activities(const Activities& p) {
  const int n = static_cast<int>(p.start.size());
  if (n > 8) throw std::runtime_error("oracle: activity enumeration limited to n <= 8");
  std::vector<std::pair<int, int>> best;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    std::vector<std::pair<int, int>> chosen;
    for (int i = 0; i < n; ++i) {
      if (mask >> i & 1) chosen.emplace_back(p.finish[i], p.start[i]);
    }
    std::sort(chosen.begin(), chosen.end());
    bool ok = true;
    for (std::size_t i = 1; i < chosen.size() && ok; ++i) ok = chosen[i].second >= chosen[i - 1].first;
    if (!ok) continue;
    if (chosen.size() > best.size() || (chosen.size() == best.size() && chosen < best)) best = chosen;
  }
  std::vector<std::string> out;
  for (const auto& [f, s] : best) {
    out.push_back(std::to_string(s));
    out.push_back(std::to_string(f));
  }
  return out;
}

}  // namespace

std::vector<std::string> solve(const TaskInstance& inst) {
  switch (inst.task) {
    case TaskId::kAddition: {
      const auto& p = std::get<BinaryOperands>(inst.payload);
      return to_bits(to_int(p.x) + to_int(p.y), p.x.size() + 1);
    }
    case TaskId::kMultiplication: {
      const auto& p = std::get<BinaryOperands>(inst.payload);
      if (p.x.size() > 32) throw std::runtime_error("oracle: multiplication limited to n <= 32");
      return to_bits(to_int(p.x) * to_int(p.y), 2 * p.x.size());
    }
    case TaskId::kMajorityOfMajorities: {
      const auto& b = std::get<BitString>(inst.payload).bits;
      const std::size_t g = b.size() / 4;
      int votes = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        const auto ones = std::count(b.begin() + k * g, b.begin() + (k + 1) * g, 1);
        votes += 2 * ones > static_cast<long>(g);
      }
      return {votes >= 3 ? "1" : "0"};
    }
    case TaskId::kBfs: return names(bfs(std::get<GraphPayload>(inst.payload)));
    case TaskId::kDfs: return names(dfs(std::get<GraphPayload>(inst.payload)));
    case TaskId::kShortestPath: return names(shortest(std::get<GraphPayload>(inst.payload)));
    case TaskId::kTopologicalSort: return names(topo(std::get<GraphPayload>(inst.payload)));
    case TaskId::kMst: return mst(std::get<GraphPayload>(inst.payload));
    case TaskId::kMaxSubarray: return max_subarray(std::get<IntSequence>(inst.payload).values);
    case TaskId::kActivitySelection: return activities(std::get<Activities>(inst.payload));
  }
  return {};
}

bool valid_topological_order(const GraphPayload& g, const std::vector<std::string>& order) {
  const int n = g.num_vertices;
  if (static_cast<int>(order.size()) != n) return false;
  std::vector<int> pos(n, -1);
  for (int i = 0; i < n; ++i) {
    const int v = std::stoi(order[i].substr(1)) - 1;
    if (v < 0 || v >= n || pos[v] >= 0) return false;
    pos[v] = i;
  }
  for (const auto& e : g.edges) {
    if (pos[e.u] >= pos[e.v]) return false;
  }
  return true;
}

std::uint64_t brute_canonical(const SmallGraph& g) {
  std::vector<int> perm(g.n);
  std::iota(perm.begin(), perm.end(), 0);
  std::uint64_t best = ~0ull;
  do {
    std::uint64_t cert = 0;
    for (int i = 0; i < g.n; ++i) {
      for (int j = i + 1; j < g.n; ++j) cert = (cert << 1) | (g.has_edge(perm[i], perm[j]) ? 1 : 0);
    }
    best = std::min(best, cert);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::vector<std::uint64_t> connected_classes(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::set<std::uint64_t> classes;
  for (std::uint64_t mask = 0; mask < (1ull << pairs.size()); ++mask) {
    SmallGraph g(n);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      if (mask >> k & 1) g.add_edge(pairs[k].first, pairs[k].second);
    }
    // Connectivity by repeated relaxation.
    std::vector<bool> reach(n, false);
    reach[0] = true;
    for (int round = 0; round < n; ++round) {
      for (int u = 0; u < n; ++u) {
        for (int v = 0; v < n; ++v) {
          if (reach[u] && g.has_edge(u, v)) reach[v] = true;
        }
      }
    }
    if (std::all_of(reach.begin(), reach.end(), [](bool b) { return b; })) classes.insert(brute_canonical(g));
  }
  return {classes.begin(), classes.end()};
}

}  // namespace oracle
