#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qf/tasks.hpp"

namespace qf {

struct Example {
  TaskInstance instance;
  TokenSequence tokens;
};

struct DedupReport {
  std::uint64_t candidates_drawn = 0;
  std::uint64_t exact_duplicates = 0;
  std::uint64_t swap_leaks = 0;             // (b,a) of an evaluation pair rejected from train
  std::uint64_t isomorphic_duplicates = 0;  // graph tasks: class already used
};

inline constexpr std::size_t kDefaultEvalSize = 1000;

struct DatasetSplit {
  TaskId task = TaskId::kAddition;
  int input_size = 0;
  std::uint64_t seed = 0;
  Vocabulary vocab;
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  DedupReport report;
};

// Number of distinct instances the generator can produce under the dedup
// rules (isomorphism classes of connected graphs for graph tasks).
long double instance_space_size(TaskId task, int input_size);

// Validation and test are drawn first from their own stream, so they do not
// depend on n_train. Train excludes evaluation instances, their operand swaps
// (binary tasks), and evaluation isomorphism classes (graph tasks).
DatasetSplit build_dataset(TaskId task, int input_size, std::size_t n_train, std::uint64_t seed,
                           std::size_t n_eval = kDefaultEvalSize);

// Fresh examples disjoint from every split of `dataset` under the same dedup
// rules. Used for probe training pools.
std::vector<Example> build_holdout(const DatasetSplit& dataset, std::size_t count, std::uint64_t stream);

// Split files: "<split>.txt" (header line + one example per line) and
// "<split>.features.tsv" for tasks with probe features, plus manifest.json.
void write_dataset(const DatasetSplit& dataset, const std::filesystem::path& dir, const std::string& config_hash = "");
DatasetSplit read_dataset(const std::filesystem::path& dir);

std::string example_key(const TokenSequence& tokens);

}  // namespace qf
