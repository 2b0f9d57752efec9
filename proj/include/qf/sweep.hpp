#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/trainer.hpp"

namespace qf {

struct GridAxes {
  std::vector<int> model_dims{8, 16, 32, 64, 128, 256, 512};
  std::vector<int> n_layers{4, 16};
  std::vector<int> batch_sizes{8, 64};
  std::vector<double> peak_lrs{1e-1, 1e-2, 1e-3, 1e-4};
  int n_heads = 4;
};

struct BudgetGrid {
  std::vector<double> budgets;  // ascending FLOPs targets
  GridAxes axes;
  std::int64_t max_steps = 100000;
  std::int64_t max_steps_high = 10000000;  // cap above 1e15 FLOPs
  int eval_points = 50;

  // 10^lo, 10^(lo+0.5), ..., 10^hi.
  static std::vector<double> half_decades(double lo_exponent, double hi_exponent);
  std::int64_t step_cap(double budget) const { return budget > 1e15 ? max_steps_high : max_steps; }
  void validate() const;
};

// Tokens per training sequence used in the FLOPs accounting.
int sequence_tokens(TaskId task, int input_size);

// total_steps = floor(budget / (6·N·batch·T)). Configurations with fewer than
// one step, more than the cap, or a training set larger than the task's
// instance space are dropped. Throws a configuration error naming the binding
// constraint when nothing survives.
std::vector<RunConfig> enumerate_grid(TaskId task, int input_size, double budget, const BudgetGrid& grid,
                                      std::uint64_t data_seed = 0);

struct ScalingPoint {
  double budget = 0;
  bool usable = false;  // false when every run at this budget diverged
  RunConfig best;
  std::string best_hash;
  double val_loss = std::nan("");
  double test_accuracy = std::nan("");
  double test_loss = std::nan("");
  std::size_t dataset_size = 0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
};

struct Transition {
  bool found = false;
  std::size_t index = 0;  // into the input series
  double x = 0;
  double plateau = 0;
  double slow_slope = 0;  // log-log OLS slope before the threshold
  double fast_slope = 0;  // log-log OLS slope from the last plateau point on
};

struct TransitionOptions {
  std::size_t min_plateau = 3;  // points required before a candidate
  double relative_delta = 0.05;
  double absolute_delta = 0.02;  // nats
  double kink_ratio = 5.0;       // local drop slope vs slow slope
};

// Threshold = first x_k (k >= min_plateau) with y_k < plateau - delta that
// never returns above that line, where plateau = median(y_0..y_{k-1}) and
// delta = max(0.05·plateau, 0.02); the drop into x_k must also be at least
// kink_ratio times steeper in log-log space than the slow phase, which rules
// out single power laws.
Transition detect_transition(std::span<const double> x, std::span<const double> y, const TransitionOptions& options = {});
Transition detect_transition(std::span<const ScalingPoint> points, const TransitionOptions& options = {});
// Over snapshots with step >= max(min_step, 1).
Transition detect_transition(std::span<const Snapshot> snapshots, std::int64_t min_step = 1,
                             const TransitionOptions& options = {});
// Over a run's evaluations from the end of warmup on, so the drop from chance
// during warmup is not mistaken for the threshold.
Transition detect_transition(const RunRecord& run, const TransitionOptions& options = {});

// Pool-adjacent-violators fit of a non-increasing sequence.
std::vector<double> isotonic_non_increasing(std::span<const double> y);

struct SizeFrontier {
  std::string label;  // e.g. "d64-L4"
  int model_dim = 0;
  int n_layers = 0;
  std::vector<double> budgets;
  std::vector<double> val_losses;
};

struct FrontierReport {
  TaskId task = TaskId::kAddition;
  int input_size = 0;
  std::uint64_t data_seed = 0;
  std::vector<ScalingPoint> points;
  std::vector<double> isotonic_losses;
  Transition transition;  // on the isotonic frontier
  std::vector<SizeFrontier> fixed_size;
  std::string grid_hash;
};

struct SweepOptions {
  std::filesystem::path results_dir;  // runs/<hash>/ and frontier.json; empty keeps everything in memory
  int workers = 0;                    // 0: QF_WORKERS or hardware concurrency
  std::uint64_t data_seed = 0;
  bool verbose = false;
};

struct SweepOutcome {
  FrontierReport frontier;
  std::vector<RunRecord> runs;
  std::size_t executed = 0;  // runs trained in this call (the rest were resumed)
};

SweepOutcome run_sweep(TaskId task, int input_size, const BudgetGrid& grid, const SweepOptions& options = {});

// Selection and frontier assembly from completed records (order-independent).
FrontierReport build_frontier(TaskId task, int input_size, const BudgetGrid& grid, std::span<const RunRecord> runs,
                              std::uint64_t data_seed = 0);

nlohmann::json budget_grid_to_json(const BudgetGrid& grid);
BudgetGrid budget_grid_from_json(const nlohmann::json& j);
nlohmann::json frontier_to_json(const FrontierReport& f);
FrontierReport frontier_from_json(const nlohmann::json& j);
nlohmann::json transition_to_json(const Transition& t);

}  // namespace qf
