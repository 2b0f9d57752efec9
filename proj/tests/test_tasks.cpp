#include <doctest.h>

#include <cmath>
#include <map>

#include "oracles.hpp"
#include "qf/error.hpp"
#include "qf/features.hpp"
#include "qf/graph_canon.hpp"
#include "qf/tasks.hpp"

using namespace qf;

namespace {

std::vector<std::uint8_t> bits_of(unsigned v, int n) {
  std::vector<std::uint8_t> b;
  for (int i = 0; i < n; ++i) b.push_back((v >> i) & 1);
  return b;
}

TaskInstance make(TaskId task, int n, Payload p) {
  TaskInstance inst{task, n, std::move(p), {}};
  inst.target = solve(inst);
  return inst;
}

GraphPayload path_graph() {
  GraphPayload g;
  g.num_vertices = 3;
  g.edges = {{0, 1, 0}, {0, 2, 0}};
  g.start = 0;
  return g;
}

}  // namespace

TEST_CASE("addition of 3 and 1 at width 2") {
  const auto inst = make(TaskId::kAddition, 2, BinaryOperands{bits_of(3, 2), bits_of(1, 2)});
  CHECK(inst.target == std::vector<std::string>{"0", "0", "1"});
  const auto vocab = Vocabulary::for_task(TaskId::kAddition, 2);
  const auto tokens = serialize(inst, vocab);
  CHECK(render_symbols(tokens, vocab) == "1 1 + 1 0 = 0 0 1 <EOS>");
}

TEST_CASE("multiplication of 3 and 3 at width 2") {
  const auto inst = make(TaskId::kMultiplication, 2, BinaryOperands{bits_of(3, 2), bits_of(3, 2)});
  const auto vocab = Vocabulary::for_task(TaskId::kMultiplication, 2);
  CHECK(render_symbols(serialize(inst, vocab), vocab) == "1 1 * 1 1 = 1 0 0 1 <EOS>");
}

TEST_CASE("majority sampling rejects ties") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto inst = sample_instance(TaskId::kMajorityOfMajorities, 32, s);
    const auto& bits = std::get<BitString>(inst.payload).bits;
    int votes = 0;
    for (int g = 0; g < 4; ++g) {
      int ones = 0;
      for (int i = 0; i < 8; ++i) ones += bits[g * 8 + i];
      REQUIRE(ones != 4);
      votes += ones > 4;
    }
    REQUIRE(votes != 2);
  }
}

TEST_CASE("small hand-checked answers") {
  CHECK(make(TaskId::kBfs, 3, path_graph()).target == std::vector<std::string>{"v1", "v2", "v3"});
  CHECK(make(TaskId::kMaxSubarray, 3, IntSequence{{2, -3, 4}}).target == std::vector<std::string>{"4"});
  CHECK(make(TaskId::kMaxSubarray, 2, IntSequence{{-1, -2}}).target == std::vector<std::string>{"-1"});
  CHECK(make(TaskId::kActivitySelection, 2, Activities{{1, 3}, {2, 4}}).target ==
        std::vector<std::string>{"1", "2", "3", "4"});
}

TEST_CASE("malformed payloads are structural errors") {
  GraphPayload g = path_graph();
  g.edges.push_back({1, 1, 0});
  CHECK_THROWS_AS(solve(TaskId::kBfs, 3, g), Error);
  try {
    solve(TaskId::kMaxSubarray, 2, IntSequence{{10, 1}});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kStructure);
  }
  CHECK_THROWS_AS(check_input_size(TaskId::kMajorityOfMajorities, 6), Error);
}

TEST_CASE("parse errors") {
  const auto vocab = Vocabulary::for_task(TaskId::kAddition, 2);
  const auto inst = parse(tokens_from_text("1 1 + 1 0 = 0 0 1 <EOS>", vocab), vocab);
  const auto& p = std::get<BinaryOperands>(inst.payload);
  CHECK(p.x == bits_of(3, 2));
  CHECK(p.y == bits_of(1, 2));
  CHECK(inst.target == std::vector<std::string>{"0", "0", "1"});

  const auto no_eos = tokens_from_text("1 1 + 1 0 = 0 0 1", vocab);
  try {
    parse(no_eos, vocab);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == no_eos.length());
  }
  try {
    parse(tokens_from_text("1 1 = 0 0 1 <EOS>", vocab), vocab);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 2);
  }
}

TEST_CASE("solvers agree with brute force on small sizes") {
  const std::map<TaskId, int> sizes{{TaskId::kAddition, 3},          {TaskId::kMultiplication, 3},
                                    {TaskId::kMajorityOfMajorities, 8}, {TaskId::kBfs, 5},
                                    {TaskId::kDfs, 5},               {TaskId::kShortestPath, 5},
                                    {TaskId::kTopologicalSort, 5},   {TaskId::kMst, 5},
                                    {TaskId::kMaxSubarray, 5},       {TaskId::kActivitySelection, 5}};
  for (const auto& [task, n] : sizes) {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const auto inst = sample_instance(task, n, s);
      REQUIRE_MESSAGE(inst.target == oracle::solve(inst), task_name(task), " seed ", s);
    }
  }
}

TEST_CASE("serialization round trip and layout") {
  for (auto task : kAllTasks) {
    const int n = paper_input_sizes(task).front();
    const auto vocab = Vocabulary::for_task(task, n);
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto inst = sample_instance(task, n, s);
      const auto tokens = serialize(inst, vocab);
      REQUIRE(tokens.ids.back() == vocab.eos_id());
      REQUIRE(tokens.answer_start >= 1);
      REQUIRE(tokens.ids[tokens.answer_start - 1] == vocab.equals_id());
      REQUIRE(static_cast<int>(tokens.length()) <= max_sequence_length(task, n));
      REQUIRE(parse(tokens, vocab) == inst);
    }
  }
}

TEST_CASE("carry annotations reproduce the sum") {
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto inst = sample_instance(TaskId::kAddition, 8, s);
    const auto& p = std::get<BinaryOperands>(inst.payload);
    const auto ann = extract_features(inst);
    const auto& carry = ann.track(FeatureId::kCarry);
    REQUIRE(carry.points.size() == 8);
    int c_prev = 0;
    for (int i = 0; i < 8; ++i) {
      const int z = p.x[i] ^ p.y[i] ^ c_prev;
      REQUIRE(inst.target[i] == std::to_string(z));
      c_prev = static_cast<int>(carry.at_slot(i)->value[0]);
    }
    REQUIRE(inst.target[8] == std::to_string(c_prev));
  }
}

TEST_CASE("hand-checked annotations") {
  const auto add = make(TaskId::kAddition, 2, BinaryOperands{bits_of(3, 2), bits_of(1, 2)});
  const auto a = extract_features(add);
  CHECK(a.track(FeatureId::kCarry).at_slot(0)->value[0] == 1);
  CHECK(a.track(FeatureId::kCarry).at_slot(1)->value[0] == 1);
  CHECK(a.track(FeatureId::kFirstOperand).at_slot(0)->value[0] == 1);

  const auto sub = make(TaskId::kMaxSubarray, 3, IntSequence{{2, -3, 4}});
  const auto b = extract_features(sub);
  const auto& meh = b.track(FeatureId::kMaxEndingHere);
  CHECK(meh.at_slot(0)->value[0] == 2);
  CHECK(meh.at_slot(1)->value[0] == -1);
  CHECK(meh.at_slot(2)->value[0] == 4);
  CHECK(b.track(FeatureId::kIsPrevNegative).at_slot(2)->value[0] == 1);

  const auto bfs = make(TaskId::kBfs, 3, path_graph());
  const auto c = extract_features(bfs);
  CHECK(c.track(FeatureId::kQueue).at_slot(0)->value == std::vector<double>{0, 1, 1});
  CHECK(c.track(FeatureId::kAdjacencyList).at_slot(0)->value == std::vector<double>{0, 1, 1});
}

TEST_CASE("Kadane annotation matches the emitted subarray") {
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto inst = sample_instance(TaskId::kMaxSubarray, 16, s);
    const auto ann = extract_features(inst);
    double best = -1e9;
    for (const auto& p : ann.track(FeatureId::kMaxEndingHere).points) best = std::max(best, p.value[0]);
    int sum = 0;
    for (const auto& t : inst.target) sum += std::stoi(t);
    REQUIRE(best == sum);
  }
}

TEST_CASE("canonical form agrees with brute force") {
  for (std::uint64_t s = 0; s < 300; ++s) {
    Rng rng(s);
    const int n = 2 + static_cast<int>(s % 6);
    SmallGraph g(n);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.bernoulli(0.5)) g.add_edge(i, j);
      }
    }
    const auto perm = rng.permutation(n);
    const auto h = relabel(g, perm);
    REQUIRE(canonical_form(g) == canonical_form(h));
    SmallGraph other(n);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.bernoulli(0.5)) other.add_edge(i, j);
      }
    }
    REQUIRE((canonical_form(g) == canonical_form(other)) == (oracle::brute_canonical(g) == oracle::brute_canonical(other)));
  }
  for (int n = 2; n <= 6; ++n) CHECK(connected_class_count(n) == oracle::connected_classes(n).size());
}

TEST_CASE("BFS instances are uniform over connected 5-vertex classes") {
  const auto classes = oracle::connected_classes(5);
  REQUIRE(classes.size() == 21);
  std::map<std::uint64_t, int> counts;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const auto inst = sample_instance(TaskId::kBfs, 5, static_cast<std::uint64_t>(s));
    const auto& g = std::get<GraphPayload>(inst.payload);
    SmallGraph sg(5);
    for (const auto& e : g.edges) sg.add_edge(e.u, e.v);
    ++counts[oracle::brute_canonical(sg)];
  }
  REQUIRE(counts.size() == 21);
  const double p = 1.0 / 21;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (auto c : classes) CHECK(std::abs(counts[c] - mean) <= 3 * sigma);
}
