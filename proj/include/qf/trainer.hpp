#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/dataset.hpp"
#include "qf/model.hpp"

namespace qf {

// Linear warmup over the first 10% of steps from 0.01·peak, then cosine decay
// to 0.1·peak at total_steps.
struct Schedule {
  double peak_lr = 1e-3;
  std::int64_t total_steps = 0;
  std::int64_t warmup_steps() const { return total_steps / 10; }
};

inline constexpr double kWarmupStartFactor = 0.01;
inline constexpr double kFinalLrFactor = 0.1;

double lr_at(std::int64_t step, const Schedule& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

template <typename T>
struct OptimizerState {
  AdamWConfig config;
  std::vector<T> m;
  std::vector<T> v;
  std::vector<std::uint8_t> decay;  // 1 where weight decay applies
  std::int64_t step = 0;
};

template <typename T>
OptimizerState<T> make_optimizer(const ParamLayout& layout, const AdamWConfig& config);
template <typename T>
OptimizerState<T> make_optimizer(std::size_t size, const AdamWConfig& config);

// Scales grads in place so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <typename T>
double clip_global_norm(std::span<T> grads, double max_norm);

// One bias-corrected AdamW update. Decay is decoupled: p <- p - lr·wd·p, then
// p <- p - lr·m̂/(√v̂ + eps). Throws a numeric error on non-finite gradients.
template <typename T>
void adamw_step(OptimizerState<T>& opt, std::span<T> params, std::span<const T> grads, double lr);

struct EvalOptions {
  int batch_size = 250;
  std::span<const Intervention> interventions;
  bool keep_examples = true;  // per-example correctness and loss
};

struct EvalReport {
  double loss = 0;      // mean masked cross-entropy over all answer tokens
  double accuracy = 0;  // exact match of the greedy answer including <EOS>
  std::size_t examples = 0;
  std::vector<double> position_losses;  // per answer position (incl. <EOS>)
  std::array<double, 3> thirds{};       // Beginning / Middle / End
  std::vector<std::uint8_t> correct;
  std::vector<double> example_losses;
};

// Partition of n positions into contiguous thirds; the remainder goes to the
// earlier thirds. Returns the [begin, end) bounds of each third.
std::array<std::pair<std::size_t, std::size_t>, 3> third_bounds(std::size_t n);
std::array<double, 3> thirds_average(std::span<const double> values);

// Exact match is read off one teacher-forced pass: under causal attention the
// greedy decoder reproduces the target iff every answer-position argmax does.
template <typename T>
EvalReport evaluate(const ModelState<T>& state, std::span<const Example> split, const EvalOptions& options = {});

// Autoregressive greedy decoding after the prompt (through '='); stops at <EOS>
// or after max_new tokens.
template <typename T>
std::vector<int> greedy_decode(const ModelState<T>& state, std::span<const int> prompt, int max_new,
                               std::span<const Intervention> interventions = {});

struct RunConfig {
  TaskId task = TaskId::kAddition;
  int input_size = 8;
  ModelConfig model;  // vocab_size / max_seq_len are filled from the task
  int batch_size = 64;
  double peak_lr = 1e-3;
  std::int64_t total_steps = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t init_seed = 0;
  int eval_points = 50;
  bool checkpoint_at_evals = false;
  std::size_t eval_examples = kDefaultEvalSize;
  double budget = 0;  // FLOPs target that produced total_steps (0: unset)
  AdamWConfig optimizer;
  std::int64_t max_steps = 100000;
  // Absolute paths kept in the record, relative to this directory when set.
  std::filesystem::path out_dir;
};

ModelConfig resolve_model_config(const RunConfig& run);
std::string run_config_hash(const RunConfig& run);

struct Snapshot {
  std::int64_t step = 0;
  double train_loss = 0;  // mean minibatch loss since the previous snapshot (NaN before any step)
  double val_loss = 0;
  double val_accuracy = 0;
  std::vector<double> position_losses;
  std::array<double, 3> thirds{};
};

struct RunRecord {
  RunConfig config;
  std::string config_hash;
  std::int64_t params = 0;
  std::size_t train_examples = 0;
  std::vector<Snapshot> snapshots;
  EvalReport test;
  std::vector<std::pair<std::int64_t, std::string>> checkpoints;  // step -> file name
  bool diverged = false;
  std::string divergence;
  double wall_seconds = 0;
  bool completed = false;
};

// Evaluation steps: 0 plus up to eval_points log-spaced integers in [1, total].
std::vector<std::int64_t> eval_schedule(std::int64_t total_steps, int points);

struct TrainHooks {
  // Called at every evaluation with the current float state.
  std::function<void(std::int64_t step, const ModelState<float>&)> on_eval;
  bool verbose = false;
};

RunRecord train_run(const RunConfig& run, const TrainHooks& hooks = {});
// Builds the run's dataset (same as train_run does internally).
DatasetSplit run_dataset(const RunConfig& run);

nlohmann::json run_config_to_json(const RunConfig& run);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_record_to_json(const RunRecord& rec);
RunRecord run_record_from_json(const nlohmann::json& j);
nlohmann::json snapshot_to_json(const Snapshot& s);

}  // namespace qf
