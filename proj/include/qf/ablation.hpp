#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "qf/probes.hpp"
#include "qf/random.hpp"
#include "qf/trainer.hpp"

namespace qf {

// Euclidean projection of x onto {z : w·z + b = 0}.
std::vector<double> ablate_direction(std::span<const double> x, std::span<const double> w, double b);

enum class AblationMode : std::uint8_t { kFeature, kRandom };

inline constexpr int kDefaultRandomTrials = 32;
inline constexpr std::size_t kDefaultBootstrapResamples = 100000;

struct AblationPlan {
  TaskId task = TaskId::kAddition;
  FeatureId feature = FeatureId::kCarry;
  std::vector<TrainedProbe> probes;  // one per slot, each at its selected layer
  AblationMode mode = AblationMode::kFeature;
  int trials = kDefaultRandomTrials;
  std::uint64_t seed = 0;
};

struct AblationResult {
  AblationMode mode = AblationMode::kFeature;
  EvalReport baseline;
  EvalReport ablated;               // feature mode
  std::vector<EvalReport> trials;   // random mode
  std::vector<std::vector<Intervention>> interventions;  // per trial (one entry in feature mode)
};

// Interventions for the plan's probes on sequences shaped like `example`.
std::vector<Intervention> plan_interventions(const AblationPlan& plan, const Example& example, int model_dim,
                                             std::span<const std::vector<double>> directions = {});

template <typename T>
AblationResult run_with_ablation(const ModelState<T>& state, const AblationPlan& plan, std::span<const Example> examples);
template <typename T>
AblationResult random_ablation(const ModelState<T>& state, const AblationPlan& plan, std::span<const Example> examples);

// Uniform direction on the unit sphere.
std::vector<double> random_unit_vector(int dim, Rng& rng);

struct BootstrapReport {
  double delta_accuracy = 0;  // feature minus pooled random
  double ci_low = 0;
  double ci_high = 0;
  double p_value = 0;  // fraction of resamples with delta >= 0 (ties count half)
  double delta_loss = 0;
  double loss_ci_low = 0;
  double loss_ci_high = 0;
  double loss_p_value = 0;  // fraction of resamples with loss delta <= 0 (ties count half)
  std::size_t resamples = 0;
};

// Paired example-level bootstrap with random trials pooled per example.
BootstrapReport bootstrap_significance(const EvalReport& feature, std::span<const EvalReport> random,
                                       std::size_t resamples = kDefaultBootstrapResamples, std::uint64_t seed = 0);

struct MeanCi {
  double mean = 0;
  double low = 0;
  double high = 0;
};
// Percentile bootstrap CI of a per-example mean.
MeanCi bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed);

// Baseline / feature / random accuracy and loss with 95% intervals, and the
// significance of the feature-vs-random difference.
nlohmann::json ablation_report(TaskId task, int input_size, FeatureId feature, const AblationResult& feature_result,
                               const AblationResult& random_result, const BootstrapReport& significance,
                               std::size_t resamples = 10000);

}  // namespace qf
