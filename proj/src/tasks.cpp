#include "qf/tasks.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <sstream>
#include <tuple>

#include "qf/error.hpp"
#include "qf/graph_canon.hpp"
#include "qf/random.hpp"

namespace qf {

namespace {

constexpr int kMaxAttempts = 10000;

constexpr std::array<std::string_view, 10> kTaskNames = {
    "addition", "multiplication", "majority_of_majorities", "bfs", "dfs",
    "shortest_path", "topological_sort", "mst", "max_subarray", "activity_selection",
};

std::string bit_symbol(std::uint8_t b) { return b ? "1" : "0"; }

}  // namespace

std::string_view task_name(TaskId task) { return kTaskNames[static_cast<std::size_t>(task)]; }

TaskId parse_task(std::string_view name) {
  for (TaskId t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  fail(ErrorKind::kConfig, "unknown task '" + std::string(name) + "'");
}

bool is_graph_task(TaskId task) {
  switch (task) {
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst:
      return true;
    default:
      return false;
  }
}

bool is_binary_pair_task(TaskId task) {
  return task == TaskId::kAddition || task == TaskId::kMultiplication;
}

std::vector<int> paper_input_sizes(TaskId task) {
  switch (task) {
    case TaskId::kAddition: return {8, 16, 32, 64, 128};
    case TaskId::kMultiplication: return {16, 32};
    case TaskId::kMajorityOfMajorities: return {32, 64};
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst: return {10, 11};
    case TaskId::kMaxSubarray: return {8, 16, 32, 64};
    case TaskId::kActivitySelection: return {8, 16, 32};
  }
  return {};
}

namespace {

struct SizeRange {
  int lo;
  int hi;
  int multiple;
};

SizeRange size_range(TaskId task) {
  switch (task) {
    case TaskId::kAddition: return {1, 128, 1};
    case TaskId::kMultiplication: return {1, 64, 1};
    case TaskId::kMajorityOfMajorities: return {4, 128, 4};
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst: return {2, kMaxGraphVertices, 1};
    case TaskId::kMaxSubarray: return {1, 128, 1};
    case TaskId::kActivitySelection: return {1, 64, 1};
  }
  return {0, -1, 1};
}

}  // namespace

bool input_size_supported(TaskId task, int input_size) {
  const auto r = size_range(task);
  return input_size >= r.lo && input_size <= r.hi && input_size % r.multiple == 0;
}

void check_input_size(TaskId task, int input_size) {
  if (input_size_supported(task, input_size)) return;
  const auto r = size_range(task);
  std::ostringstream msg;
  msg << "input size " << input_size << " is not supported for " << task_name(task) << " (supported: " << r.lo
      << ".." << r.hi;
  if (r.multiple > 1) msg << ", multiples of " << r.multiple;
  msg << ")";
  fail(ErrorKind::kConfig, msg.str());
}

std::string vertex_symbol(int vertex) { return "v" + std::to_string(vertex + 1); }

// ----------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::for_task(TaskId task, int input_size) {
  check_input_size(task, input_size);
  Vocabulary vocab;
  vocab.task_ = task;
  vocab.input_size_ = input_size;
  vocab.symbols_.emplace_back(kPadSymbol);
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication:
    case TaskId::kMajorityOfMajorities:
      vocab.symbols_.emplace_back("0");
      vocab.symbols_.emplace_back("1");
      break;
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst:
      for (int v = 0; v < input_size; ++v) vocab.symbols_.push_back(vertex_symbol(v));
      if (task == TaskId::kMst) {
        for (int w = kMstWeightMin; w <= kMstWeightMax; ++w) vocab.symbols_.push_back(std::to_string(w));
      }
      break;
    case TaskId::kMaxSubarray:
      for (int k = kSubarrayMin; k <= kSubarrayMax; ++k) vocab.symbols_.push_back(std::to_string(k));
      break;
    case TaskId::kActivitySelection:
      for (int t = kActivityTimeMin; t <= kActivityTimeMax; ++t) vocab.symbols_.push_back(std::to_string(t));
      break;
  }
  for (auto s : {kPlusSymbol, kTimesSymbol, kEqualsSymbol, kEosSymbol}) vocab.symbols_.emplace_back(s);
  for (std::size_t i = 0; i < vocab.symbols_.size(); ++i) vocab.index_.emplace(vocab.symbols_[i], static_cast<int>(i));
  vocab.equals_id_ = vocab.index_.at(std::string(kEqualsSymbol));
  vocab.eos_id_ = vocab.index_.at(std::string(kEosSymbol));
  return vocab;
}

int Vocabulary::id(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) {
    fail(ErrorKind::kEncoding, "symbol '" + std::string(symbol) + "' is not in the " + std::string(task_name(task_)) +
                                   " vocabulary");
  }
  return it->second;
}

bool Vocabulary::contains(std::string_view symbol) const { return index_.count(std::string(symbol)) > 0; }

const std::string& Vocabulary::symbol(int id) const {
  require(id >= 0 && id < size(), ErrorKind::kEncoding, "token id " + std::to_string(id) + " out of vocabulary range");
  return symbols_[static_cast<std::size_t>(id)];
}

// ----------------------------------------------------------------------------
// Validation

namespace {

void structural(bool ok, TaskId task, const std::string& what) {
  if (!ok) fail(ErrorKind::kStructure, std::string(task_name(task)) + ": " + what);
}

template <typename P>
const P& payload_as(TaskId task, const Payload& payload) {
  const P* p = std::get_if<P>(&payload);
  structural(p != nullptr, task, "payload has the wrong type for this task");
  return *p;
}

bool all_bits(const std::vector<std::uint8_t>& bits) {
  return std::all_of(bits.begin(), bits.end(), [](std::uint8_t b) { return b <= 1; });
}

// Majority of a group; -1 on a tie.
int group_majority(const std::vector<std::uint8_t>& bits, std::size_t begin, std::size_t size) {
  std::size_t ones = 0;
  for (std::size_t i = begin; i < begin + size; ++i) ones += bits[i];
  if (2 * ones == size) return -1;
  return 2 * ones > size ? 1 : 0;
}

SmallGraph underlying_graph(const GraphPayload& g) {
  SmallGraph out(g.num_vertices);
  for (const auto& e : g.edges) out.add_edge(e.u, e.v);
  return out;
}

std::vector<std::vector<int>> sorted_adjacency(const GraphPayload& g) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(g.num_vertices));
  for (const auto& e : g.edges) {
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  return adj;
}

struct DisjointSets {
  std::vector<int> parent;
  explicit DisjointSets(int n) : parent(static_cast<std::size_t>(n)) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

std::vector<Edge> canonical_edge_order(std::vector<Edge> edges) {
  for (auto& e : edges) {
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.weight, a.u, a.v) < std::tie(b.weight, b.u, b.v);
  });
  return edges;
}

// Kruskal; returns tree edges (canonical order) and whether the minimum tree is unique.
std::pair<std::vector<Edge>, bool> kruskal_unique(const GraphPayload& g) {
  const auto edges = canonical_edge_order(g.edges);
  DisjointSets sets(g.num_vertices);
  std::vector<Edge> tree;
  std::vector<Edge> rest;
  for (const auto& e : edges) {
    if (sets.unite(e.u, e.v)) {
      tree.push_back(e);
    } else {
      rest.push_back(e);
    }
  }
  // Unique iff every non-tree edge is strictly heavier than the heaviest tree
  // edge on the cycle it closes.
  std::vector<std::vector<std::pair<int, int>>> tree_adj(static_cast<std::size_t>(g.num_vertices));
  for (const auto& e : tree) {
    tree_adj[static_cast<std::size_t>(e.u)].emplace_back(e.v, e.weight);
    tree_adj[static_cast<std::size_t>(e.v)].emplace_back(e.u, e.weight);
  }
  auto path_max = [&](int from, int to) {
    std::vector<int> best(static_cast<std::size_t>(g.num_vertices), -1);
    std::vector<int> stack{from};
    best[static_cast<std::size_t>(from)] = 0;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (auto [v, w] : tree_adj[static_cast<std::size_t>(u)]) {
        if (best[static_cast<std::size_t>(v)] >= 0) continue;
        best[static_cast<std::size_t>(v)] = std::max(best[static_cast<std::size_t>(u)], w);
        stack.push_back(v);
      }
    }
    return best[static_cast<std::size_t>(to)];
  };
  for (const auto& e : rest) {
    if (path_max(e.u, e.v) >= e.weight) return {tree, false};
  }
  return {tree, true};
}

void validate_graph(TaskId task, int n, const GraphPayload& g) {
  structural(g.num_vertices == n, task, "vertex count does not match input size");
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(n * n), 0);
  for (const auto& e : g.edges) {
    structural(e.u >= 0 && e.u < n && e.v >= 0 && e.v < n, task, "edge endpoint out of range");
    structural(e.u != e.v, task, "self loop");
    const auto key = static_cast<std::size_t>(std::min(e.u, e.v) * n + std::max(e.u, e.v));
    structural(!seen[key], task, "duplicate edge");
    seen[key] = 1;
    if (task == TaskId::kMst) {
      structural(e.weight >= kMstWeightMin && e.weight <= kMstWeightMax, task, "edge weight out of range");
    }
  }
  structural(is_connected(underlying_graph(g)), task, "graph is not connected");
  switch (task) {
    case TaskId::kBfs:
    case TaskId::kDfs:
      structural(g.start >= 0 && g.start < n, task, "start vertex out of range");
      break;
    case TaskId::kShortestPath:
      structural(g.start >= 0 && g.start < n && g.finish >= 0 && g.finish < n, task, "endpoint out of range");
      structural(g.start != g.finish, task, "source equals destination");
      break;
    case TaskId::kTopologicalSort: {
      std::vector<int> indegree(static_cast<std::size_t>(n), 0);
      std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
      for (const auto& e : g.edges) {
        out[static_cast<std::size_t>(e.u)].push_back(e.v);
        ++indegree[static_cast<std::size_t>(e.v)];
      }
      std::vector<int> ready;
      for (int v = 0; v < n; ++v) {
        if (indegree[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
      }
      int removed = 0;
      while (!ready.empty()) {
        const int u = ready.back();
        ready.pop_back();
        ++removed;
        for (int v : out[static_cast<std::size_t>(u)]) {
          if (--indegree[static_cast<std::size_t>(v)] == 0) ready.push_back(v);
        }
      }
      structural(removed == n, task, "graph has a directed cycle");
      break;
    }
    case TaskId::kMst:
      structural(kruskal_unique(g).second, task, "minimum spanning tree is not unique");
      break;
    default:
      break;
  }
}

}  // namespace

void validate_payload(TaskId task, int n, const Payload& payload) {
  structural(input_size_supported(task, n), task, "input size " + std::to_string(n) + " is not supported");
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: {
      const auto& p = payload_as<BinaryOperands>(task, payload);
      structural(p.x.size() == static_cast<std::size_t>(n) && p.y.size() == static_cast<std::size_t>(n), task,
                 "operand width does not match input size");
      structural(all_bits(p.x) && all_bits(p.y), task, "operand contains a non-bit value");
      break;
    }
    case TaskId::kMajorityOfMajorities: {
      const auto& p = payload_as<BitString>(task, payload);
      structural(p.bits.size() == static_cast<std::size_t>(n), task, "bit string length does not match input size");
      structural(all_bits(p.bits), task, "bit string contains a non-bit value");
      const auto group = static_cast<std::size_t>(n / 4);
      int ones = 0;
      for (std::size_t gi = 0; gi < 4; ++gi) {
        const int m = group_majority(p.bits, gi * group, group);
        structural(m >= 0, task, "tied group vote");
        ones += m;
      }
      structural(ones != 2, task, "tied final vote");
      break;
    }
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst:
      validate_graph(task, n, payload_as<GraphPayload>(task, payload));
      break;
    case TaskId::kMaxSubarray: {
      const auto& p = payload_as<IntSequence>(task, payload);
      structural(p.values.size() == static_cast<std::size_t>(n), task, "sequence length does not match input size");
      structural(std::all_of(p.values.begin(), p.values.end(), [](int k) { return k >= kSubarrayMin && k <= kSubarrayMax; }),
                 task, "value outside [-9, 9]");
      break;
    }
    case TaskId::kActivitySelection: {
      const auto& p = payload_as<Activities>(task, payload);
      structural(p.start.size() == static_cast<std::size_t>(n) && p.finish.size() == static_cast<std::size_t>(n), task,
                 "activity count does not match input size");
      for (std::size_t i = 0; i < p.start.size(); ++i) {
        structural(p.start[i] >= kActivityTimeMin && p.finish[i] <= kActivityTimeMax && p.start[i] < p.finish[i], task,
                   "activity times must satisfy 0 <= s < f <= 20");
      }
      break;
    }
  }
}

// ----------------------------------------------------------------------------
// Solvers

namespace {

std::vector<std::string> solve_addition(const BinaryOperands& p) {
  std::vector<std::string> z;
  int carry = 0;
  for (std::size_t i = 0; i < p.x.size(); ++i) {
    const int s = p.x[i] + p.y[i] + carry;
    z.push_back(bit_symbol(static_cast<std::uint8_t>(s & 1)));
    carry = s >> 1;
  }
  z.push_back(bit_symbol(static_cast<std::uint8_t>(carry)));
  return z;
}

std::vector<std::string> solve_multiplication(const BinaryOperands& p) {
  const std::size_t n = p.x.size();
  std::vector<std::uint8_t> acc(2 * n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (!p.y[j]) continue;
    int carry = 0;
    for (std::size_t i = j; i < 2 * n; ++i) {
      const int add = (i - j < n) ? p.x[i - j] : 0;
      const int s = acc[i] + add + carry;
      acc[i] = static_cast<std::uint8_t>(s & 1);
      carry = s >> 1;
    }
  }
  std::vector<std::string> z;
  for (auto b : acc) z.push_back(bit_symbol(b));
  return z;
}

std::vector<std::string> solve_majority(const BitString& p) {
  const std::size_t group = p.bits.size() / 4;
  int ones = 0;
  for (std::size_t g = 0; g < 4; ++g) ones += group_majority(p.bits, g * group, group);
  return {ones > 2 ? "1" : "0"};
}

std::vector<std::string> vertex_symbols(const std::vector<int>& vertices) {
  std::vector<std::string> out;
  out.reserve(vertices.size());
  for (int v : vertices) out.push_back(vertex_symbol(v));
  return out;
}

std::vector<int> bfs_order(const GraphPayload& g) {
  const auto adj = sorted_adjacency(g);
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(g.num_vertices), 0);
  std::queue<int> queue;
  std::vector<int> order;
  queue.push(g.start);
  visited[static_cast<std::size_t>(g.start)] = 1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop();
    order.push_back(u);
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (!visited[static_cast<std::size_t>(v)]) {
        visited[static_cast<std::size_t>(v)] = 1;
        queue.push(v);
      }
    }
  }
  return order;
}

std::vector<int> dfs_order(const GraphPayload& g) {
  const auto adj = sorted_adjacency(g);
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(g.num_vertices), 0);
  std::vector<int> order;
  std::function<void(int)> visit = [&](int u) {
    visited[static_cast<std::size_t>(u)] = 1;
    order.push_back(u);
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (!visited[static_cast<std::size_t>(v)]) visit(v);
    }
  };
  visit(g.start);
  return order;
}

std::vector<int> shortest_path(const GraphPayload& g) {
  const auto adj = sorted_adjacency(g);
  std::vector<int> dist(static_cast<std::size_t>(g.num_vertices), -1);
  std::queue<int> queue;
  queue.push(g.finish);
  dist[static_cast<std::size_t>(g.finish)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop();
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push(v);
      }
    }
  }
  // Walking toward the destination through the smallest label at each step
  // yields the lexicographically smallest shortest path.
  std::vector<int> path{g.start};
  int cur = g.start;
  while (cur != g.finish) {
    for (int v : adj[static_cast<std::size_t>(cur)]) {
      if (dist[static_cast<std::size_t>(v)] == dist[static_cast<std::size_t>(cur)] - 1) {
        cur = v;
        break;
      }
    }
    path.push_back(cur);
  }
  return path;
}

std::vector<int> topological_order(const GraphPayload& g) {
  std::vector<int> indegree(static_cast<std::size_t>(g.num_vertices), 0);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(g.num_vertices));
  for (const auto& e : g.edges) {
    out[static_cast<std::size_t>(e.u)].push_back(e.v);
    ++indegree[static_cast<std::size_t>(e.v)];
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int v = 0; v < g.num_vertices; ++v) {
    if (indegree[static_cast<std::size_t>(v)] == 0) ready.push(v);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    const int u = ready.top();
    ready.pop();
    order.push_back(u);
    for (int v : out[static_cast<std::size_t>(u)]) {
      if (--indegree[static_cast<std::size_t>(v)] == 0) ready.push(v);
    }
  }
  return order;
}

std::vector<std::string> solve_mst(const GraphPayload& g) {
  const auto tree = kruskal_unique(g).first;
  std::vector<std::string> out;
  for (const auto& e : tree) {
    out.push_back(vertex_symbol(e.u));
    out.push_back(vertex_symbol(e.v));
  }
  return out;
}

std::vector<std::string> solve_max_subarray(const IntSequence& p) {
  // Kadane with the best (smallest) start for every end; ties between optima
  // go to the smallest start, then the smallest end.
  int best_sum = 0;
  int best_start = -1;
  int best_end = -1;
  int run_sum = 0;
  int run_start = 0;
  for (int j = 0; j < static_cast<int>(p.values.size()); ++j) {
    const int k = p.values[static_cast<std::size_t>(j)];
    if (j == 0 || run_sum < 0) {
      run_sum = k;
      run_start = j;
    } else {
      run_sum += k;
    }
    if (best_start < 0 || run_sum > best_sum || (run_sum == best_sum && run_start < best_start)) {
      best_sum = run_sum;
      best_start = run_start;
      best_end = j;
    }
  }
  std::vector<std::string> out;
  for (int i = best_start; i <= best_end; ++i) out.push_back(std::to_string(p.values[static_cast<std::size_t>(i)]));
  return out;
}

std::vector<std::string> solve_activity(const Activities& p) {
  std::vector<std::size_t> idx(p.start.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(p.finish[a], p.start[a], a) < std::tie(p.finish[b], p.start[b], b);
  });
  std::vector<std::string> out;
  int last_finish = kActivityTimeMin - 1;
  for (auto i : idx) {
    if (p.start[i] >= last_finish) {
      out.push_back(std::to_string(p.start[i]));
      out.push_back(std::to_string(p.finish[i]));
      last_finish = p.finish[i];
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> solve(TaskId task, int input_size, const Payload& payload) {
  validate_payload(task, input_size, payload);
  switch (task) {
    case TaskId::kAddition: return solve_addition(std::get<BinaryOperands>(payload));
    case TaskId::kMultiplication: return solve_multiplication(std::get<BinaryOperands>(payload));
    case TaskId::kMajorityOfMajorities: return solve_majority(std::get<BitString>(payload));
    case TaskId::kBfs: return vertex_symbols(bfs_order(std::get<GraphPayload>(payload)));
    case TaskId::kDfs: return vertex_symbols(dfs_order(std::get<GraphPayload>(payload)));
    case TaskId::kShortestPath: return vertex_symbols(shortest_path(std::get<GraphPayload>(payload)));
    case TaskId::kTopologicalSort: return vertex_symbols(topological_order(std::get<GraphPayload>(payload)));
    case TaskId::kMst: return solve_mst(std::get<GraphPayload>(payload));
    case TaskId::kMaxSubarray: return solve_max_subarray(std::get<IntSequence>(payload));
    case TaskId::kActivitySelection: return solve_activity(std::get<Activities>(payload));
  }
  fail(ErrorKind::kStructure, "unknown task");
}

// ----------------------------------------------------------------------------
// Sampling

namespace {

std::vector<std::uint8_t> random_bits(Rng& rng, int n) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(n));
  for (auto& b : bits) b = static_cast<std::uint8_t>(rng.next_u64() >> 63);
  return bits;
}

[[noreturn]] void generation_failure(TaskId task, int n, const std::string& constraint) {
  fail(ErrorKind::kGeneration, std::string(task_name(task)) + " (n=" + std::to_string(n) + "): rejection sampler gave up after " +
                                   std::to_string(kMaxAttempts) + " attempts; violated constraint: " + constraint);
}

SmallGraph sample_connected_graph(TaskId task, int n, Rng& rng) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    auto g = sample_unlabeled_graph(n, rng);
    if (is_connected(g)) return relabel(g, rng.permutation(n));
  }
  generation_failure(task, n, "graph connectivity");
}

std::vector<Edge> shuffled_edges(const SmallGraph& g, Rng& rng, bool randomize_endpoints) {
  std::vector<Edge> edges;
  for (int u = 0; u < g.n; ++u) {
    for (int v = u + 1; v < g.n; ++v) {
      if (g.has_edge(u, v)) edges.push_back({u, v, 0});
    }
  }
  rng.shuffle(edges);
  if (randomize_endpoints) {
    for (auto& e : edges) {
      if (rng.bernoulli(0.5)) std::swap(e.u, e.v);
    }
  }
  return edges;
}

GraphPayload sample_graph_payload(TaskId task, int n, Rng& rng) {
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const SmallGraph g = sample_connected_graph(task, n, rng);
    GraphPayload p;
    p.num_vertices = n;
    switch (task) {
      case TaskId::kBfs:
      case TaskId::kDfs:
        p.edges = shuffled_edges(g, rng, true);
        p.start = static_cast<int>(rng.uniform_int(0, n - 1));
        return p;
      case TaskId::kShortestPath:
        p.edges = shuffled_edges(g, rng, true);
        p.start = static_cast<int>(rng.uniform_int(0, n - 1));
        p.finish = static_cast<int>(rng.uniform_int(0, n - 2));
        if (p.finish >= p.start) ++p.finish;
        return p;
      case TaskId::kTopologicalSort: {
        const auto rank = rng.permutation(n);
        p.edges = shuffled_edges(g, rng, false);
        for (auto& e : p.edges) {
          if (rank[static_cast<std::size_t>(e.u)] > rank[static_cast<std::size_t>(e.v)]) std::swap(e.u, e.v);
        }
        return p;
      }
      case TaskId::kMst: {
        p.edges = shuffled_edges(g, rng, true);
        for (int weight_attempt = 0; weight_attempt < 64; ++weight_attempt) {
          for (auto& e : p.edges) e.weight = static_cast<int>(rng.uniform_int(kMstWeightMin, kMstWeightMax));
          if (kruskal_unique(p).second) return p;
        }
        break;  // resample the graph
      }
      default:
        break;
    }
  }
  generation_failure(task, n, "unique minimum spanning tree");
}

Payload sample_payload(TaskId task, int n, Rng& rng) {
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: {
      BinaryOperands p;
      p.x = random_bits(rng, n);
      p.y = random_bits(rng, n);
      return p;
    }
    case TaskId::kMajorityOfMajorities: {
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        BitString p{random_bits(rng, n)};
        const auto group = static_cast<std::size_t>(n / 4);
        int ones = 0;
        bool tied = false;
        for (std::size_t g = 0; g < 4 && !tied; ++g) {
          const int m = group_majority(p.bits, g * group, group);
          tied = m < 0;
          ones += m;
        }
        if (!tied && ones != 2) return p;
      }
      generation_failure(task, n, "no tied group or final vote");
    }
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst:
      return sample_graph_payload(task, n, rng);
    case TaskId::kMaxSubarray: {
      IntSequence p;
      for (int i = 0; i < n; ++i) p.values.push_back(static_cast<int>(rng.uniform_int(kSubarrayMin, kSubarrayMax)));
      return p;
    }
    case TaskId::kActivitySelection: {
      // Uniform over the 210 ordered (s < f) pairs in [0, 20].
      Activities p;
      for (int i = 0; i < n; ++i) {
        int s = 0;
        int f = 0;
        do {
          s = static_cast<int>(rng.uniform_int(kActivityTimeMin, kActivityTimeMax));
          f = static_cast<int>(rng.uniform_int(kActivityTimeMin, kActivityTimeMax));
        } while (s >= f);
        p.start.push_back(s);
        p.finish.push_back(f);
      }
      return p;
    }
  }
  fail(ErrorKind::kConfig, "unknown task");
}

}  // namespace

TaskInstance sample_instance(TaskId task, int input_size, std::uint64_t seed) {
  check_input_size(task, input_size);
  Rng rng(derive_seed(seed, 0x7461736bULL + static_cast<std::uint64_t>(task)));
  TaskInstance inst;
  inst.task = task;
  inst.input_size = input_size;
  inst.payload = sample_payload(task, input_size, rng);
  inst.target = solve(task, input_size, inst.payload);
  return inst;
}

// ----------------------------------------------------------------------------
// Serialization

namespace {

std::vector<std::string> prompt_symbols(const TaskInstance& inst) {
  std::vector<std::string> out;
  const TaskId task = inst.task;
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: {
      const auto& p = std::get<BinaryOperands>(inst.payload);
      for (auto b : p.x) out.push_back(bit_symbol(b));
      out.emplace_back(task == TaskId::kAddition ? kPlusSymbol : kTimesSymbol);
      for (auto b : p.y) out.push_back(bit_symbol(b));
      break;
    }
    case TaskId::kMajorityOfMajorities:
      for (auto b : std::get<BitString>(inst.payload).bits) out.push_back(bit_symbol(b));
      break;
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst: {
      const auto& g = std::get<GraphPayload>(inst.payload);
      if (task == TaskId::kBfs || task == TaskId::kDfs || task == TaskId::kShortestPath) out.push_back(vertex_symbol(g.start));
      if (task == TaskId::kShortestPath) out.push_back(vertex_symbol(g.finish));
      for (const auto& e : g.edges) {
        out.push_back(vertex_symbol(e.u));
        out.push_back(vertex_symbol(e.v));
        if (task == TaskId::kMst) out.push_back(std::to_string(e.weight));
      }
      break;
    }
    case TaskId::kMaxSubarray:
      for (int k : std::get<IntSequence>(inst.payload).values) out.push_back(std::to_string(k));
      break;
    case TaskId::kActivitySelection: {
      const auto& p = std::get<Activities>(inst.payload);
      for (int s : p.start) out.push_back(std::to_string(s));
      for (int f : p.finish) out.push_back(std::to_string(f));
      break;
    }
  }
  return out;
}

}  // namespace

TokenSequence serialize(const TaskInstance& inst, const Vocabulary& vocab) {
  require(vocab.task() == inst.task && vocab.input_size() == inst.input_size, ErrorKind::kEncoding,
          "vocabulary does not match the instance's task and input size");
  TokenSequence seq;
  for (const auto& s : prompt_symbols(inst)) seq.ids.push_back(vocab.id(s));
  seq.ids.push_back(vocab.equals_id());
  seq.answer_start = seq.ids.size();
  for (const auto& s : inst.target) seq.ids.push_back(vocab.id(s));
  seq.ids.push_back(vocab.eos_id());
  return seq;
}

namespace {

class Cursor {
 public:
  Cursor(const TokenSequence& tokens, const Vocabulary& vocab) : tokens_(tokens), vocab_(vocab) {}

  std::size_t position() const { return pos_; }
  bool at_end() const { return pos_ >= tokens_.ids.size(); }

  const std::string& peek() const {
    if (at_end()) throw ParseError(pos_, "unexpected end of stream");
    const int id = tokens_.ids[pos_];
    if (id < 0 || id >= vocab_.size()) throw ParseError(pos_, "token id " + std::to_string(id) + " out of range");
    return vocab_.symbol(id);
  }

  const std::string& next() {
    const auto& s = peek();
    ++pos_;
    return s;
  }

  void expect(std::string_view symbol) {
    const auto& s = peek();
    if (s != symbol) throw ParseError(pos_, "expected '" + std::string(symbol) + "', found '" + s + "'");
    ++pos_;
  }

  std::uint8_t bit() {
    const auto& s = peek();
    if (s != "0" && s != "1") throw ParseError(pos_, "expected a bit, found '" + s + "'");
    ++pos_;
    return s == "1" ? 1 : 0;
  }

  bool is_vertex(const std::string& s) const { return s.size() > 1 && s[0] == 'v'; }

  int vertex() {
    const auto& s = peek();
    if (!is_vertex(s)) throw ParseError(pos_, "expected a vertex, found '" + s + "'");
    ++pos_;
    return std::stoi(s.substr(1)) - 1;
  }

  bool is_number(const std::string& s) const {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-') ? 1 : 0;
    if (i >= s.size()) return false;
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(), [](char c) { return c >= '0' && c <= '9'; });
  }

  int number() {
    const auto& s = peek();
    if (!is_number(s)) throw ParseError(pos_, "expected an integer, found '" + s + "'");
    ++pos_;
    return std::stoi(s);
  }

 private:
  const TokenSequence& tokens_;
  const Vocabulary& vocab_;
  std::size_t pos_ = 0;
};

}  // namespace

TaskInstance parse(const TokenSequence& tokens, const Vocabulary& vocab) {
  const TaskId task = vocab.task();
  const int n = vocab.input_size();
  TaskInstance inst;
  inst.task = task;
  inst.input_size = n;
  Cursor cur(tokens, vocab);
  std::size_t expected_answer = 0;  // 0 = variable length
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: {
      BinaryOperands p;
      for (int i = 0; i < n; ++i) p.x.push_back(cur.bit());
      cur.expect(task == TaskId::kAddition ? kPlusSymbol : kTimesSymbol);
      for (int i = 0; i < n; ++i) p.y.push_back(cur.bit());
      inst.payload = std::move(p);
      expected_answer = static_cast<std::size_t>(task == TaskId::kAddition ? n + 1 : 2 * n);
      break;
    }
    case TaskId::kMajorityOfMajorities: {
      BitString p;
      for (int i = 0; i < n; ++i) p.bits.push_back(cur.bit());
      inst.payload = std::move(p);
      expected_answer = 1;
      break;
    }
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst: {
      GraphPayload g;
      g.num_vertices = n;
      if (task == TaskId::kBfs || task == TaskId::kDfs || task == TaskId::kShortestPath) g.start = cur.vertex();
      if (task == TaskId::kShortestPath) g.finish = cur.vertex();
      while (cur.peek() != kEqualsSymbol) {
        Edge e;
        e.u = cur.vertex();
        e.v = cur.vertex();
        if (task == TaskId::kMst) e.weight = cur.number();
        g.edges.push_back(e);
      }
      inst.payload = std::move(g);
      if (task == TaskId::kBfs || task == TaskId::kDfs || task == TaskId::kTopologicalSort) {
        expected_answer = static_cast<std::size_t>(n);
      } else if (task == TaskId::kMst) {
        expected_answer = static_cast<std::size_t>(2 * (n - 1));
      }
      break;
    }
    case TaskId::kMaxSubarray: {
      IntSequence p;
      for (int i = 0; i < n; ++i) p.values.push_back(cur.number());
      inst.payload = std::move(p);
      break;
    }
    case TaskId::kActivitySelection: {
      Activities p;
      for (int i = 0; i < n; ++i) p.start.push_back(cur.number());
      for (int i = 0; i < n; ++i) p.finish.push_back(cur.number());
      inst.payload = std::move(p);
      break;
    }
  }
  cur.expect(kEqualsSymbol);
  while (true) {
    if (cur.at_end()) throw ParseError(cur.position(), "missing <EOS>");
    const auto& s = cur.peek();
    if (s == kEosSymbol) break;
    if (s == kEqualsSymbol || s == kPlusSymbol || s == kTimesSymbol || s == kPadSymbol) {
      throw ParseError(cur.position(), "unexpected '" + s + "' in answer");
    }
    if (expected_answer > 0 && inst.target.size() == expected_answer) {
      throw ParseError(cur.position(), "answer longer than " + std::to_string(expected_answer) + " tokens");
    }
    inst.target.push_back(cur.next());
  }
  if (expected_answer > 0 && inst.target.size() != expected_answer) {
    throw ParseError(cur.position(), "answer has " + std::to_string(inst.target.size()) + " tokens, expected " +
                                         std::to_string(expected_answer));
  }
  cur.expect(kEosSymbol);
  if (!cur.at_end()) throw ParseError(cur.position(), "tokens after <EOS>");
  return inst;
}

std::string render_symbols(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.symbol(tokens.ids[i]);
  }
  return out;
}

TokenSequence tokens_from_text(std::string_view text, const Vocabulary& vocab) {
  TokenSequence seq;
  std::istringstream in{std::string(text)};
  std::string sym;
  while (in >> sym) {
    seq.ids.push_back(vocab.id(sym));
    if (seq.answer_start == 0 && sym == kEqualsSymbol) seq.answer_start = seq.ids.size();
  }
  return seq;
}

int fixed_sequence_length(TaskId task, int n) {
  switch (task) {
    case TaskId::kAddition: return 3 * n + 4;
    case TaskId::kMultiplication: return 4 * n + 3;
    case TaskId::kMajorityOfMajorities: return n + 3;
    default: return -1;
  }
}

int max_sequence_length(TaskId task, int n) {
  const int fixed = fixed_sequence_length(task, n);
  if (fixed > 0) return fixed;
  const int max_edges = n * (n - 1) / 2;
  switch (task) {
    case TaskId::kBfs:
    case TaskId::kDfs: return 1 + 2 * max_edges + 1 + n + 1;
    case TaskId::kShortestPath: return 2 + 2 * max_edges + 1 + n + 1;
    case TaskId::kTopologicalSort: return 2 * max_edges + 1 + n + 1;
    case TaskId::kMst: return 3 * max_edges + 1 + 2 * (n - 1) + 1;
    case TaskId::kMaxSubarray: return 2 * n + 2;
    case TaskId::kActivitySelection: return 4 * n + 2;
    default: return -1;
  }
}

}  // namespace qf
