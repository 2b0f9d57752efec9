#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "qf/dataset.hpp"
#include "qf/features.hpp"
#include "qf/lbfgs.hpp"
#include "qf/model.hpp"

namespace qf {

enum class ProbeKind : std::uint8_t { kLogistic, kMultiLabel, kRegression };

std::string_view probe_kind_name(ProbeKind kind);
ProbeKind probe_kind_for(FeatureId feature);

inline constexpr double kProbeC = 100.0;
inline constexpr int kProbeMaxIterations = 1000;
inline constexpr std::size_t kProbeTrainRows = 10000;
inline constexpr std::size_t kProbeTestRows = 1000;

struct ProbeSpec {
  TaskId task = TaskId::kAddition;
  FeatureId feature = FeatureId::kCarry;
  int slot = 0;   // token within its group (z_i, k_i, ...), zero-based
  int layer = 0;  // zero-based; the residual stream after this layer
  ProbeKind kind = ProbeKind::kLogistic;
  double C = kProbeC;
  int max_iterations = kProbeMaxIterations;
};

// Row-major design matrix + labels for one (feature, layer, slot).
struct ProbeDataset {
  FeatureId feature = FeatureId::kCarry;
  int layer = 0;
  int slot = 0;
  int dim = 0;
  int width = 1;
  std::vector<double> x;  // rows x dim
  std::vector<double> y;  // rows x width
  std::vector<std::size_t> example_index;
  std::size_t skipped = 0;  // examples where the feature is undefined at this slot
  std::string provenance;

  std::size_t rows() const { return example_index.size(); }
  const double* row(std::size_t i) const { return x.data() + i * static_cast<std::size_t>(dim); }
};

// All (layer, slot) blocks for one feature, gathered from one capture pass.
struct ActivationSet {
  FeatureId feature = FeatureId::kCarry;
  int layers = 0;
  int slots = 0;
  std::vector<ProbeDataset> blocks;  // layer-major

  const ProbeDataset& at(int layer, int slot) const;
};

template <typename T>
ActivationSet collect_activations(const ModelState<T>& state, std::span<const Example> examples, FeatureId feature,
                                  std::optional<int> layer = std::nullopt, std::optional<int> slot = std::nullopt,
                                  const std::string& provenance = "");

struct TrainedProbe {
  FeatureId feature = FeatureId::kCarry;
  ProbeKind kind = ProbeKind::kLogistic;
  int layer = 0;
  int slot = 0;
  int dim = 0;
  int width = 1;
  std::vector<double> weights;  // width x dim
  std::vector<double> bias;     // width
  double train_loss = 0;        // cross-entropy (nats) or mean squared error
  double test_loss = 0;
  double objective = 0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;  // some head saw a single class
  std::string provenance;

  std::span<const double> head(int k) const {
    return {weights.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
};

// Logistic kinds minimise 0.5·|w|^2 + C·sum(log-loss) per head (intercept
// unpenalised) by L-BFGS; regression is minimum-norm least squares.
TrainedProbe train_probe(const ProbeSpec& spec, const ProbeDataset& train, const ProbeDataset* test = nullptr);

// Mean loss of a trained probe on a dataset (kind-appropriate).
double probe_loss(const TrainedProbe& probe, const ProbeDataset& data);

// Lowest training loss; ties go to the lower layer.
const TrainedProbe& select_probe(std::span<const TrainedProbe> candidates);

// One binary head, for property tests and reuse.
struct LogisticFit {
  std::vector<double> w;
  double b = 0;
  double objective = 0;
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;
};
LogisticFit fit_logistic(std::span<const double> x, std::span<const double> y, int dim, double C, int max_iterations);
double logistic_objective(std::span<const double> x, std::span<const double> y, int dim, double C,
                          std::span<const double> w, double b);

struct ProbeCurvePoint {
  std::int64_t step = 0;  // checkpoint step, or budget index for budget-indexed series
  double x = 0;           // plotted abscissa (step or FLOPs)
  double val_loss = std::nan("");
  std::vector<double> slot_test_losses;
  std::vector<int> slot_layers;
  std::array<double, 3> thirds{};
};

struct ProbeCurve {
  TaskId task = TaskId::kAddition;
  int input_size = 0;
  FeatureId feature = FeatureId::kCarry;
  std::vector<ProbeCurvePoint> points;
  ProbeCurvePoint baseline;  // random-initialisation model
  std::vector<std::string> gaps;
  std::vector<TrainedProbe> probes;  // selected probes of every point (baseline excluded)
};

struct ProbeModel {
  std::int64_t step = 0;
  double x = 0;
  double val_loss = std::nan("");
  std::optional<ModelState<float>> state;  // empty: missing checkpoint
  std::string label;
};

struct ProbePool {
  std::vector<Example> train;
  std::vector<Example> test;
};

// Holdout pool disjoint from every split of the dataset.
ProbePool build_probe_pool(const DatasetSplit& dataset, std::size_t train_rows = kProbeTrainRows,
                           std::size_t test_rows = kProbeTestRows);

struct ProbeSweepOptions {
  std::uint64_t baseline_seed = 0x0ba5e11e;
  int workers = 0;  // 0: QF_WORKERS or hardware concurrency
  bool keep_probes = true;
};

// Per model: per-slot probes at every layer, selection by train loss, test loss
// at 1000 held-out rows, thirds over slots; plus the same pipeline on a randomly
// initialised model of the same configuration.
ProbeCurve probe_sweep(TaskId task, int input_size, FeatureId feature, std::span<const ProbeModel> models,
                       const ProbePool& pool, const ProbeSweepOptions& options = {});

// Best probe per slot for one model (used by ablation plans).
std::vector<TrainedProbe> select_probes_for_model(const ModelState<float>& state, FeatureId feature, const ProbePool& pool,
                                                  int workers = 0);

nlohmann::json probe_to_json(const TrainedProbe& p);
TrainedProbe probe_from_json(const nlohmann::json& j);
nlohmann::json probe_curve_to_json(const ProbeCurve& c);
ProbeCurve probe_curve_from_json(const nlohmann::json& j);

int default_workers();

}  // namespace qf
