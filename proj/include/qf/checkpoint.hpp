#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "qf/model.hpp"

namespace qf {

// Binary container:
//   "QFCKPT1\n"
//   u64 header length, JSON header {config, step, rng_state, provenance, tensors:[names]}
//   per tensor, in header order: u64 rows, u64 cols, rows*cols little-endian float32
struct Checkpoint {
  ModelState<float> state;
  std::uint64_t step = 0;
  std::string rng_state;   // textual mt19937_64 state of the batch stream
  std::string provenance;  // config hash of the producing run
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace qf
