#include "qf/features.hpp"

#include <algorithm>
#include <array>
#include <queue>

#include "qf/error.hpp"

namespace qf {

namespace {

constexpr std::array<std::string_view, 7> kFeatureNames = {
    "carry", "first_operand", "queue", "adjacency_list", "is_prev_negative", "max_ending_here", "start_time",
};

FeatureTrack make_track(FeatureId feature, int width) {
  FeatureTrack t;
  t.feature = feature;
  t.width = width;
  return t;
}

// Carries out of each bit when adding a and b (both LSB first, equal width).
std::vector<std::uint8_t> carries(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::vector<std::uint8_t> c(a.size());
  int carry = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    carry = (a[i] + b[i] + carry) >> 1;
    c[i] = static_cast<std::uint8_t>(carry);
  }
  return c;
}

std::vector<std::uint8_t> add_bits(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::vector<std::uint8_t> s(a.size());
  int carry = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int t = a[i] + b[i] + carry;
    s[i] = static_cast<std::uint8_t>(t & 1);
    carry = t >> 1;
  }
  return s;
}

void binary_features(const TaskInstance& inst, std::size_t answer_start, FeatureAnnotations& out) {
  const auto& p = std::get<BinaryOperands>(inst.payload);
  const int n = inst.input_size;
  auto carry = make_track(FeatureId::kCarry, 1);
  auto first = make_track(FeatureId::kFirstOperand, 1);
  if (inst.task == TaskId::kAddition) {
    const auto c = carries(p.x, p.y);
    for (int i = 1; i <= n; ++i) {
      carry.points.push_back({i - 1, answer_start + static_cast<std::size_t>(i - 1), {double(c[i - 1])}});
    }
  } else {
    // Carries of the last addition: (sum of the first n-1 partial products) + (n-th partial product).
    const auto width = static_cast<std::size_t>(2 * n);
    std::vector<std::uint8_t> running(width, 0);
    for (int j = 0; j + 1 < n; ++j) {
      if (!p.y[j]) continue;
      std::vector<std::uint8_t> shifted(width, 0);
      for (int i = 0; i < n; ++i) shifted[i + j] = p.x[i];
      running = add_bits(running, shifted);
    }
    std::vector<std::uint8_t> last(width, 0);
    if (p.y[n - 1]) {
      for (int i = 0; i < n; ++i) last[i + n - 1] = p.x[i];
    }
    const auto c = carries(running, last);
    for (int i = 1; i <= 2 * n - 1; ++i) {
      carry.points.push_back({i - 1, answer_start + static_cast<std::size_t>(i - 1), {double(c[i - 1])}});
    }
  }
  for (int i = 1; i <= n - 1; ++i) {
    first.points.push_back({i - 1, answer_start + static_cast<std::size_t>(i - 1), {double(p.x[i])}});
  }
  out.tracks.push_back(std::move(carry));
  out.tracks.push_back(std::move(first));
}

void bfs_features(const TaskInstance& inst, std::size_t answer_start, FeatureAnnotations& out) {
  const auto& g = std::get<GraphPayload>(inst.payload);
  const int n = g.num_vertices;
  std::vector<std::vector<int>> adj(n);
  for (const auto& e : g.edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  for (auto& row : adj) std::sort(row.begin(), row.end());
  auto queue_track = make_track(FeatureId::kQueue, n);
  auto adj_track = make_track(FeatureId::kAdjacencyList, n);
  std::vector<std::uint8_t> visited(n, 0);
  std::deque<int> queue{g.start};
  visited[g.start] = 1;
  int slot = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int v : adj[u]) {
      if (!visited[v]) {
        visited[v] = 1;
        queue.push_back(v);
      }
    }
    std::vector<double> on_queue(n, 0.0);
    for (int v : queue) on_queue[v] = 1.0;
    std::vector<double> neighbours(n, 0.0);
    for (int v : adj[u]) neighbours[v] = 1.0;
    const auto pos = answer_start + static_cast<std::size_t>(slot);
    queue_track.points.push_back({slot, pos, std::move(on_queue)});
    adj_track.points.push_back({slot, pos, std::move(neighbours)});
    ++slot;
  }
  out.tracks.push_back(std::move(queue_track));
  out.tracks.push_back(std::move(adj_track));
}

void subarray_features(const TaskInstance& inst, FeatureAnnotations& out) {
  const auto& k = std::get<IntSequence>(inst.payload).values;
  auto prev_negative = make_track(FeatureId::kIsPrevNegative, 1);
  auto max_ending = make_track(FeatureId::kMaxEndingHere, 1);
  int running = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    running = (i == 0) ? k[i] : std::max(k[i], running + k[i]);
    max_ending.points.push_back({int(i), i, {double(running)}});
    if (i > 0) prev_negative.points.push_back({int(i), i, {k[i - 1] < 0 ? 1.0 : 0.0}});
  }
  out.tracks.push_back(std::move(prev_negative));
  out.tracks.push_back(std::move(max_ending));
}

void activity_features(const TaskInstance& inst, FeatureAnnotations& out) {
  const auto& p = std::get<Activities>(inst.payload);
  const std::size_t n = p.start.size();
  auto start = make_track(FeatureId::kStartTime, 1);
  for (std::size_t i = 0; i < n; ++i) start.points.push_back({int(i), n + i, {double(p.start[i])}});
  out.tracks.push_back(std::move(start));
}

}  // namespace

std::string_view feature_name(FeatureId feature) { return kFeatureNames[static_cast<std::size_t>(feature)]; }

FeatureId parse_feature(std::string_view name) {
  for (std::size_t i = 0; i < kFeatureNames.size(); ++i) {
    if (kFeatureNames[i] == name) return static_cast<FeatureId>(i);
  }
  fail(ErrorKind::kConfig, "unknown feature '" + std::string(name) + "'");
}

FeatureKind feature_kind(FeatureId feature) {
  switch (feature) {
    case FeatureId::kCarry:
    case FeatureId::kFirstOperand:
    case FeatureId::kIsPrevNegative: return FeatureKind::kBinary;
    case FeatureId::kQueue:
    case FeatureId::kAdjacencyList: return FeatureKind::kMultiLabel;
    case FeatureId::kMaxEndingHere:
    case FeatureId::kStartTime: return FeatureKind::kReal;
  }
  return FeatureKind::kBinary;
}

std::vector<FeatureId> features_for_task(TaskId task) {
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: return {FeatureId::kCarry, FeatureId::kFirstOperand};
    case TaskId::kBfs: return {FeatureId::kQueue, FeatureId::kAdjacencyList};
    case TaskId::kMaxSubarray: return {FeatureId::kIsPrevNegative, FeatureId::kMaxEndingHere};
    case TaskId::kActivitySelection: return {FeatureId::kStartTime};
    default: return {};
  }
}

bool feature_defined(TaskId task, FeatureId feature) {
  const auto fs = features_for_task(task);
  return std::find(fs.begin(), fs.end(), feature) != fs.end();
}

std::vector<std::uint8_t> FeatureTrack::mask(std::size_t sequence_length) const {
  std::vector<std::uint8_t> m(sequence_length, 0);
  for (const auto& p : points) m[p.position] = 1;
  return m;
}

const FeaturePoint* FeatureTrack::at_slot(int slot) const {
  for (const auto& p : points) {
    if (p.slot == slot) return &p;
  }
  return nullptr;
}

const FeatureTrack& FeatureAnnotations::track(FeatureId feature) const {
  for (const auto& t : tracks) {
    if (t.feature == feature) return t;
  }
  fail(ErrorKind::kConfig, "feature '" + std::string(feature_name(feature)) + "' is not defined for " +
                               std::string(task_name(task)));
}

FeatureAnnotations extract_features(const TaskInstance& inst) {
  require(!features_for_task(inst.task).empty(), ErrorKind::kConfig,
          "task " + std::string(task_name(inst.task)) + " has no probe features");
  const auto seq = serialize(inst, Vocabulary::for_task(inst.task, inst.input_size));
  FeatureAnnotations out;
  out.task = inst.task;
  out.sequence_length = seq.length();
  switch (inst.task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: binary_features(inst, seq.answer_start, out); break;
    case TaskId::kBfs: bfs_features(inst, seq.answer_start, out); break;
    case TaskId::kMaxSubarray: subarray_features(inst, out); break;
    case TaskId::kActivitySelection: activity_features(inst, out); break;
    default: break;
  }
  return out;
}

int feature_slot_count(TaskId task, int n, FeatureId feature) {
  require(feature_defined(task, feature), ErrorKind::kConfig,
          "feature '" + std::string(feature_name(feature)) + "' is not defined for " + std::string(task_name(task)));
  switch (feature) {
    case FeatureId::kCarry: return task == TaskId::kAddition ? n : 2 * n - 1;
    case FeatureId::kFirstOperand: return n - 1;
    case FeatureId::kQueue:
    case FeatureId::kAdjacencyList:
    case FeatureId::kMaxEndingHere:
    case FeatureId::kStartTime: return n;
    case FeatureId::kIsPrevNegative: return n;  // slot 0 never defined
  }
  return 0;
}

}  // namespace qf
