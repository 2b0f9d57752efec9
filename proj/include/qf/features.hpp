#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "qf/tasks.hpp"

namespace qf {

enum class FeatureId : std::uint8_t {
  kCarry,
  kFirstOperand,
  kQueue,
  kAdjacencyList,
  kIsPrevNegative,
  kMaxEndingHere,
  kStartTime,
};

enum class FeatureKind : std::uint8_t { kBinary, kMultiLabel, kReal };

std::string_view feature_name(FeatureId feature);
FeatureId parse_feature(std::string_view name);
FeatureKind feature_kind(FeatureId feature);
std::vector<FeatureId> features_for_task(TaskId task);
bool feature_defined(TaskId task, FeatureId feature);

// Ground truth at one token. `slot` indexes the token within its group (z_i,
// v_{t_i}, k_i or f_i, zero-based) so that variable-length tasks line up.
struct FeaturePoint {
  int slot = 0;
  std::size_t position = 0;
  std::vector<double> value;  // width 1, or n for multi-label features
};

struct FeatureTrack {
  FeatureId feature = FeatureId::kCarry;
  int width = 1;
  std::vector<FeaturePoint> points;

  std::vector<std::uint8_t> mask(std::size_t sequence_length) const;
  const FeaturePoint* at_slot(int slot) const;
};

struct FeatureAnnotations {
  TaskId task = TaskId::kAddition;
  std::size_t sequence_length = 0;
  std::vector<FeatureTrack> tracks;

  // Throws a configuration error if the task does not define the feature.
  const FeatureTrack& track(FeatureId feature) const;
};

// Throws a configuration error for tasks without probe features.
FeatureAnnotations extract_features(const TaskInstance& instance);

// Number of slots a feature has for a task/input size (upper bound for
// variable-length tasks).
int feature_slot_count(TaskId task, int input_size, FeatureId feature);

}  // namespace qf
