#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace qf {

enum class TaskId : std::uint8_t {
  kAddition,
  kMultiplication,
  kMajorityOfMajorities,
  kBfs,
  kDfs,
  kShortestPath,
  kTopologicalSort,
  kMst,
  kMaxSubarray,
  kActivitySelection,
};

inline constexpr std::array<TaskId, 10> kAllTasks = {
    TaskId::kAddition,        TaskId::kMultiplication, TaskId::kMajorityOfMajorities,
    TaskId::kBfs,             TaskId::kDfs,            TaskId::kShortestPath,
    TaskId::kTopologicalSort, TaskId::kMst,            TaskId::kMaxSubarray,
    TaskId::kActivitySelection,
};

std::string_view task_name(TaskId task);
// Throws a configuration error for unknown names.
TaskId parse_task(std::string_view name);

bool is_graph_task(TaskId task);
bool is_binary_pair_task(TaskId task);

// Input sizes used for the published experiments.
std::vector<int> paper_input_sizes(TaskId task);
// Sizes the generator accepts; a superset of the paper sizes that also covers
// the small instances used by brute-force checks.
bool input_size_supported(TaskId task, int input_size);
// Throws a configuration error describing the supported range.
void check_input_size(TaskId task, int input_size);

inline constexpr int kMaxGraphVertices = 11;
inline constexpr int kSubarrayMin = -9;
inline constexpr int kSubarrayMax = 9;
inline constexpr int kMstWeightMin = 1;
inline constexpr int kMstWeightMax = 9;
inline constexpr int kActivityTimeMin = 0;
inline constexpr int kActivityTimeMax = 20;

// ----------------------------------------------------------------------------
// Payloads. Bits are least-significant first. Vertices are 0-based internally
// and spelled v1..vn in token streams.

struct BinaryOperands {
  std::vector<std::uint8_t> x;
  std::vector<std::uint8_t> y;
  bool operator==(const BinaryOperands&) const = default;
};

struct BitString {
  std::vector<std::uint8_t> bits;
  bool operator==(const BitString&) const = default;
};

struct Edge {
  int u = 0;
  int v = 0;
  int weight = 0;  // only meaningful for the MST task
  bool operator==(const Edge&) const = default;
};

struct GraphPayload {
  int num_vertices = 0;
  std::vector<Edge> edges;  // in serialization order; directed u -> v for topological sort
  int start = -1;           // BFS/DFS start, shortest-path source
  int finish = -1;          // shortest-path destination
  bool operator==(const GraphPayload&) const = default;
};

struct IntSequence {
  std::vector<int> values;
  bool operator==(const IntSequence&) const = default;
};

struct Activities {
  std::vector<int> start;
  std::vector<int> finish;
  bool operator==(const Activities&) const = default;
};

using Payload = std::variant<BinaryOperands, BitString, GraphPayload, IntSequence, Activities>;

struct TaskInstance {
  TaskId task = TaskId::kAddition;
  int input_size = 0;
  Payload payload;
  std::vector<std::string> target;  // answer symbols, excluding '=' and <EOS>
  bool operator==(const TaskInstance&) const = default;
};

// ----------------------------------------------------------------------------

inline constexpr std::string_view kPadSymbol = "<PAD>";
inline constexpr std::string_view kPlusSymbol = "+";
inline constexpr std::string_view kTimesSymbol = "*";
inline constexpr std::string_view kEqualsSymbol = "=";
inline constexpr std::string_view kEosSymbol = "<EOS>";

// Ordered symbol table for one (task, input_size). Id 0 is padding; the four
// specials follow the task symbols.
class Vocabulary {
 public:
  static Vocabulary for_task(TaskId task, int input_size);

  TaskId task() const { return task_; }
  int input_size() const { return input_size_; }
  int size() const { return static_cast<int>(symbols_.size()); }

  // Throws an encoding error when absent.
  int id(std::string_view symbol) const;
  bool contains(std::string_view symbol) const;
  const std::string& symbol(int id) const;
  const std::vector<std::string>& symbols() const { return symbols_; }

  static constexpr int kPadId = 0;
  int equals_id() const { return equals_id_; }
  int eos_id() const { return eos_id_; }

 private:
  TaskId task_ = TaskId::kAddition;
  int input_size_ = 0;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> index_;
  int equals_id_ = -1;
  int eos_id_ = -1;
};

struct TokenSequence {
  std::vector<int> ids;
  std::size_t answer_start = 0;  // index of the first token after '='
  std::size_t length() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

std::string vertex_symbol(int vertex);

// Draws one instance. Deterministic in (task, input_size, seed).
TaskInstance sample_instance(TaskId task, int input_size, std::uint64_t seed);

// Reference solver. Throws a structural error on malformed payloads.
std::vector<std::string> solve(TaskId task, int input_size, const Payload& payload);
inline std::vector<std::string> solve(const TaskInstance& instance) {
  return solve(instance.task, instance.input_size, instance.payload);
}

// Checks payload constraints (ranges, connectivity, acyclicity, tie rules).
void validate_payload(TaskId task, int input_size, const Payload& payload);

TokenSequence serialize(const TaskInstance& instance, const Vocabulary& vocab);
TaskInstance parse(const TokenSequence& tokens, const Vocabulary& vocab);

// Space-separated rendering and its inverse.
std::string render_symbols(const TokenSequence& tokens, const Vocabulary& vocab);
TokenSequence tokens_from_text(std::string_view text, const Vocabulary& vocab);

// Number of prompt/answer tokens for fixed-length tasks; -1 when it varies.
int fixed_sequence_length(TaskId task, int input_size);
// Upper bound on the serialized length (used to size model context).
int max_sequence_length(TaskId task, int input_size);

}  // namespace qf
