#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/error.hpp"
#include "qf/report.hpp"
#include "qf/sweep.hpp"

namespace qf {

enum class Stage : std::uint8_t { kGenerate, kTrain, kSweep, kProbe, kAblate, kReport };

std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

// One pipeline stage with every parameter it reads. Stored as a JSON object;
// keys not listed here are rejected.
struct ExperimentConfig {
  Stage stage = Stage::kTrain;
  TaskId task = TaskId::kAddition;
  int input_size = 8;
  std::uint64_t seed = 0;                      // data seed
  std::optional<std::uint64_t> init_seed;      // default derived from seed
  std::size_t train = 0;                       // generate: training examples
  std::size_t eval = kDefaultEvalSize;         // validation and test size each
  int model_dim = 64;
  int n_layers = 4;
  int n_heads = 4;
  int batch_size = 64;
  double peak_lr = 1e-3;
  std::int64_t steps = 0;                      // 0 with budget > 0: derived from budget
  double budget = 0;
  bool checkpoints = true;                     // train: checkpoint at every eval
  int eval_points = 50;
  std::optional<nlohmann::json> grid;          // sweep: budget grid
  FeatureId feature = FeatureId::kCarry;
  std::vector<std::int64_t> probe_steps;       // probe: subset of checkpoint steps (empty: all)
  int trials = 32;
  std::size_t resamples = 100000;
  std::uint64_t ablation_seed = 0x61626c61;
  PlotKind kind = PlotKind::kFrontier;
  std::filesystem::path in;
  std::filesystem::path out;
  int workers = 0;
  bool verbose = false;

  void validate() const;
};

nlohmann::json experiment_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
// Hash of every parameter except paths, worker count and verbosity.
std::string experiment_hash(const ExperimentConfig& c);

RunConfig run_config_for(const ExperimentConfig& c);

// Stage entry points; each writes its outputs under c.out.
void run_stage(const ExperimentConfig& c);

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitConfig = 3,
  kExitGeneration = 4,
  kExitStructure = 5,
  kExitEncoding = 6,
  kExitParse = 7,
  kExitShape = 8,
  kExitData = 9,
  kExitContract = 10,
  kExitNumeric = 11,
  kExitIo = 12,
  kExitInternal = 70,
};

int exit_code_for(ErrorKind kind);

// Full command-line entry: parses argv, loads --config, applies flag
// overrides, runs the stage. Returns the process exit status.
int cli_main(int argc, char** argv);

}  // namespace qf
