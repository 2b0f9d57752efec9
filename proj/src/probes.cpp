#include "qf/probes.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <Eigen/Dense>

#include "qf/error.hpp"
#include "qf/trainer.hpp"

namespace qf {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;

// log(1 + e^z)
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

template <typename F>
void parallel_for(std::size_t count, int workers, F&& body) {
  const int n = std::max(1, std::min<int>(workers, static_cast<int>(count)));
  if (n == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (int t = 0; t < n; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count && !failed; i = next++) {
        try {
          body(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

int default_workers() {
  if (const char* env = std::getenv("QF_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::string_view probe_kind_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::kLogistic: return "logistic";
    case ProbeKind::kMultiLabel: return "multi_label_logistic";
    case ProbeKind::kRegression: return "linear_regression";
  }
  return "unknown";
}

ProbeKind probe_kind_for(FeatureId feature) {
  switch (feature_kind(feature)) {
    case FeatureKind::kBinary: return ProbeKind::kLogistic;
    case FeatureKind::kMultiLabel: return ProbeKind::kMultiLabel;
    case FeatureKind::kReal: return ProbeKind::kRegression;
  }
  return ProbeKind::kLogistic;
}

const ProbeDataset& ActivationSet::at(int layer, int slot) const {
  for (const auto& b : blocks) {
    if (b.layer == layer && b.slot == slot) return b;
  }
  fail(ErrorKind::kContract, "no activations collected for layer " + std::to_string(layer) + ", slot " + std::to_string(slot));
}

template <typename T>
ActivationSet collect_activations(const ModelState<T>& state, std::span<const Example> examples, FeatureId feature,
                                  std::optional<int> layer, std::optional<int> slot, const std::string& provenance) {
  require(!examples.empty(), ErrorKind::kContract, "collect_activations: no examples");
  const TaskId task = examples.front().instance.task;
  const int n = examples.front().instance.input_size;
  const int L = state.config.n_layers;
  const int d = state.config.model_dim;
  const int slots = feature_slot_count(task, n, feature);
  require(!layer || (*layer >= 0 && *layer < L), ErrorKind::kConfig, "probe layer outside the model");
  require(!slot || (*slot >= 0 && *slot < slots), ErrorKind::kConfig, "probe slot outside the feature's range");

  ActivationSet set;
  set.feature = feature;
  set.layers = L;
  set.slots = slots;
  std::vector<int> layer_list, slot_list;
  for (int l = 0; l < L; ++l) {
    if (!layer || *layer == l) layer_list.push_back(l);
  }
  for (int s = 0; s < slots; ++s) {
    if (!slot || *slot == s) slot_list.push_back(s);
  }
  // block index by (layer, slot)
  std::vector<int> index(static_cast<std::size_t>(L * slots), -1);
  for (int l : layer_list) {
    for (int s : slot_list) {
      index[static_cast<std::size_t>(l * slots + s)] = static_cast<int>(set.blocks.size());
      ProbeDataset b;
      b.feature = feature;
      b.layer = l;
      b.slot = s;
      b.dim = d;
      b.provenance = provenance;
      set.blocks.push_back(std::move(b));
    }
  }

  ModelRunner<T> runner;
  ForwardOptions fopts;
  fopts.capture = true;
  constexpr std::size_t kChunk = 250;
  std::vector<TokenSequence> seqs;
  for (std::size_t begin = 0; begin < examples.size(); begin += kChunk) {
    const std::size_t end = std::min(examples.size(), begin + kChunk);
    seqs.clear();
    for (std::size_t i = begin; i < end; ++i) seqs.push_back(examples[i].tokens);
    const Batch batch = make_batch(seqs);
    const auto fwd = runner.forward(state, batch, fopts);
    for (std::size_t i = begin; i < end; ++i) {
      require(examples[i].instance.task == task && examples[i].instance.input_size == n, ErrorKind::kContract,
              "collect_activations: examples mix tasks or sizes");
      const auto ann = extract_features(examples[i].instance);
      const auto& track = ann.track(feature);
      for (int s : slot_list) {
        const FeaturePoint* p = track.at_slot(s);
        for (int l : layer_list) {
          auto& b = set.blocks[static_cast<std::size_t>(index[static_cast<std::size_t>(l * slots + s)])];
          if (!p) {
            ++b.skipped;
            continue;
          }
          b.width = track.width;
          const T* v = fwd.trace.post_at(l, static_cast<int>(i - begin), static_cast<int>(p->position));
          b.x.insert(b.x.end(), v, v + d);
          b.y.insert(b.y.end(), p->value.begin(), p->value.end());
          b.example_index.push_back(i);
        }
      }
    }
  }
  return set;
}

double logistic_objective(std::span<const double> x, std::span<const double> y, int dim, double C,
                          std::span<const double> w, double b) {
  const auto rows = static_cast<Eigen::Index>(y.size());
  const CMap X(x.data(), rows, dim);
  const Eigen::Map<const Eigen::VectorXd> wv(w.data(), dim);
  const Eigen::VectorXd z = (X * wv).array() + b;
  double loss = 0;
  for (Eigen::Index i = 0; i < rows; ++i) loss += softplus(z[i]) - y[static_cast<std::size_t>(i)] * z[i];
  return 0.5 * wv.squaredNorm() + C * loss;
}

LogisticFit fit_logistic(std::span<const double> x, std::span<const double> y, int dim, double C, int max_iterations) {
  const auto rows = static_cast<Eigen::Index>(y.size());
  require(rows > 0, ErrorKind::kData, "logistic probe: no rows");
  require(x.size() == static_cast<std::size_t>(rows) * static_cast<std::size_t>(dim), ErrorKind::kShape,
          "logistic probe: design matrix shape");
  LogisticFit fit;
  fit.w.assign(static_cast<std::size_t>(dim), 0.0);
  double positives = 0;
  for (double v : y) positives += v;
  if (positives == 0 || positives == static_cast<double>(rows)) {
    // Single class: constant predictor with a smoothed intercept.
    fit.degenerate = true;
    fit.converged = true;
    const double p = (positives + 0.5) / (static_cast<double>(rows) + 1.0);
    fit.b = std::log(p / (1 - p));
    fit.objective = logistic_objective(x, y, dim, C, fit.w, fit.b);
    return fit;
  }
  const CMap X(x.data(), rows, dim);
  const Eigen::Map<const Eigen::VectorXd> Y(y.data(), rows);
  Eigen::VectorXd z(rows), r(rows);
  Objective objective = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& grad) {
    const auto w = theta.head(dim);
    const double b = theta[dim];
    z.noalias() = X * w;
    z.array() += b;
    double loss = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      loss += softplus(z[i]) - Y[i] * z[i];
      r[i] = sigmoid(z[i]) - Y[i];
    }
    grad.resize(dim + 1);
    grad.head(dim).noalias() = C * (X.transpose() * r);
    grad.head(dim) += w;
    grad[dim] = C * r.sum();
    return 0.5 * w.squaredNorm() + C * loss;
  };
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dim + 1);
  const double p = positives / static_cast<double>(rows);
  theta[dim] = std::log(p / (1 - p));
  LbfgsOptions opts;
  opts.max_iterations = max_iterations;
  const auto res = lbfgs_minimize(objective, theta, opts);
  for (int k = 0; k < dim; ++k) fit.w[static_cast<std::size_t>(k)] = res.x[k];
  fit.b = res.x[dim];
  fit.objective = res.value;
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  return fit;
}

double probe_loss(const TrainedProbe& probe, const ProbeDataset& data) {
  const std::size_t rows = data.rows();
  require(rows > 0, ErrorKind::kData, "probe_loss: empty dataset");
  require(data.dim == probe.dim && data.width == probe.width, ErrorKind::kShape, "probe_loss: shape mismatch");
  double total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = data.row(i);
    for (int k = 0; k < probe.width; ++k) {
      const auto w = probe.head(k);
      double z = probe.bias[static_cast<std::size_t>(k)];
      for (int j = 0; j < probe.dim; ++j) z += w[static_cast<std::size_t>(j)] * xi[j];
      const double y = data.y[i * static_cast<std::size_t>(probe.width) + static_cast<std::size_t>(k)];
      if (probe.kind == ProbeKind::kRegression) {
        total += (z - y) * (z - y);
      } else {
        total += softplus(z) - y * z;
      }
    }
  }
  return total / static_cast<double>(rows * static_cast<std::size_t>(probe.width));
}

TrainedProbe train_probe(const ProbeSpec& spec, const ProbeDataset& train, const ProbeDataset* test) {
  require(train.rows() > 0, ErrorKind::kData, "train_probe: no training rows");
  require(spec.kind == probe_kind_for(spec.feature), ErrorKind::kConfig,
          "probe kind does not match the feature '" + std::string(feature_name(spec.feature)) + "'");
  TrainedProbe probe;
  probe.feature = spec.feature;
  probe.kind = spec.kind;
  probe.layer = spec.layer;
  probe.slot = spec.slot;
  probe.dim = train.dim;
  probe.width = train.width;
  probe.provenance = train.provenance;
  probe.weights.assign(static_cast<std::size_t>(train.dim) * static_cast<std::size_t>(train.width), 0.0);
  probe.bias.assign(static_cast<std::size_t>(train.width), 0.0);
  const auto rows = static_cast<Eigen::Index>(train.rows());
  const int d = train.dim;

  if (spec.kind == ProbeKind::kRegression) {
    RowMat A(rows, d + 1);
    A.leftCols(d) = CMap(train.x.data(), rows, d);
    A.col(d).setOnes();
    const Eigen::CompleteOrthogonalDecomposition<RowMat> cod(A);
    for (int k = 0; k < train.width; ++k) {
      Eigen::VectorXd yk(rows);
      for (Eigen::Index i = 0; i < rows; ++i) yk[i] = train.y[static_cast<std::size_t>(i * train.width + k)];
      const Eigen::VectorXd sol = cod.solve(yk);
      for (int j = 0; j < d; ++j) probe.weights[static_cast<std::size_t>(k * d + j)] = sol[j];
      probe.bias[static_cast<std::size_t>(k)] = sol[d];
    }
    probe.converged = true;
  } else {
    probe.converged = true;
    std::vector<double> yk(static_cast<std::size_t>(rows));
    for (int k = 0; k < train.width; ++k) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        yk[static_cast<std::size_t>(i)] = train.y[static_cast<std::size_t>(i * train.width + k)];
      }
      const auto fit = fit_logistic(train.x, yk, d, spec.C, spec.max_iterations);
      std::copy(fit.w.begin(), fit.w.end(), probe.weights.begin() + static_cast<std::ptrdiff_t>(k) * d);
      probe.bias[static_cast<std::size_t>(k)] = fit.b;
      probe.objective += fit.objective;
      probe.iterations = std::max(probe.iterations, fit.iterations);
      probe.converged = probe.converged && fit.converged;
      probe.degenerate = probe.degenerate || fit.degenerate;
    }
  }
  for (double v : probe.weights) require(std::isfinite(v), ErrorKind::kNumeric, "probe weights are not finite");
  probe.train_loss = probe_loss(probe, train);
  probe.test_loss = test && test->rows() > 0 ? probe_loss(probe, *test) : std::nan("");
  return probe;
}

const TrainedProbe& select_probe(std::span<const TrainedProbe> candidates) {
  require(!candidates.empty(), ErrorKind::kContract, "select_probe: no candidates");
  const TrainedProbe* best = &candidates.front();
  for (const auto& p : candidates) {
    if (p.train_loss < best->train_loss || (p.train_loss == best->train_loss && p.layer < best->layer)) best = &p;
  }
  return *best;
}

ProbePool build_probe_pool(const DatasetSplit& dataset, std::size_t train_rows, std::size_t test_rows) {
  auto all = build_holdout(dataset, train_rows + test_rows, 0);
  ProbePool pool;
  pool.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(train_rows)));
  pool.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(train_rows)), std::make_move_iterator(all.end()));
  return pool;
}

namespace {

// Selected probe per slot for one model.
std::vector<TrainedProbe> probe_model(const ModelState<float>& state, FeatureId feature, const ProbePool& pool,
                                      int workers, const std::string& provenance) {
  require(!pool.train.empty() && !pool.test.empty(), ErrorKind::kData, "probe pool is empty");
  const TaskId task = pool.train.front().instance.task;
  const auto train = collect_activations(state, std::span<const Example>(pool.train), feature, std::nullopt, std::nullopt,
                                         provenance);
  const auto test = collect_activations(state, std::span<const Example>(pool.test), feature, std::nullopt, std::nullopt,
                                        provenance);
  const int L = train.layers;
  const int S = train.slots;
  std::vector<TrainedProbe> all(static_cast<std::size_t>(L * S));
  std::vector<std::uint8_t> present(all.size(), 0);
  parallel_for(all.size(), workers, [&](std::size_t i) {
    const int s = static_cast<int>(i) / L;
    const int l = static_cast<int>(i) % L;
    const auto& tr = train.at(l, s);
    if (tr.rows() == 0) return;
    ProbeSpec spec{task, feature, s, l, probe_kind_for(feature)};
    all[i] = train_probe(spec, tr, &test.at(l, s));
    present[i] = 1;
  });
  std::vector<TrainedProbe> selected;
  for (int s = 0; s < S; ++s) {
    std::vector<TrainedProbe> cands;
    for (int l = 0; l < L; ++l) {
      const std::size_t i = static_cast<std::size_t>(s * L + l);
      if (present[i]) cands.push_back(all[i]);
    }
    if (!cands.empty()) selected.push_back(select_probe(cands));
  }
  return selected;
}

ProbeCurvePoint curve_point(const ProbeModel& m, const std::vector<TrainedProbe>& sel) {
  ProbeCurvePoint pt;
  pt.step = m.step;
  pt.x = m.x;
  pt.val_loss = m.val_loss;
  for (const auto& p : sel) {
    pt.slot_test_losses.push_back(p.test_loss);
    pt.slot_layers.push_back(p.layer);
  }
  pt.thirds = thirds_average(pt.slot_test_losses);
  return pt;
}

}  // namespace

std::vector<TrainedProbe> select_probes_for_model(const ModelState<float>& state, FeatureId feature, const ProbePool& pool,
                                                  int workers) {
  return probe_model(state, feature, pool, workers > 0 ? workers : default_workers(), "");
}

ProbeCurve probe_sweep(TaskId task, int input_size, FeatureId feature, std::span<const ProbeModel> models,
                       const ProbePool& pool, const ProbeSweepOptions& options) {
  require(feature_defined(task, feature), ErrorKind::kConfig,
          "feature '" + std::string(feature_name(feature)) + "' is not defined for " + std::string(task_name(task)));
  const int workers = options.workers > 0 ? options.workers : default_workers();
  ProbeCurve curve;
  curve.task = task;
  curve.input_size = input_size;
  curve.feature = feature;
  const ModelConfig* shared = nullptr;
  for (const auto& m : models) {
    if (!m.state) {
      curve.gaps.push_back(m.label.empty() ? "step " + std::to_string(m.step) : m.label);
      continue;
    }
    if (!shared) shared = &m.state->config;
    ModelConfig a = *shared, b = m.state->config;
    a.seed = b.seed = 0;
    require(a == b, ErrorKind::kConfig, "probe_sweep requires every model to share one configuration");
    const auto sel = probe_model(*m.state, feature, pool, workers, m.label);
    curve.points.push_back(curve_point(m, sel));
    if (options.keep_probes) curve.probes.insert(curve.probes.end(), sel.begin(), sel.end());
  }
  require(shared != nullptr, ErrorKind::kData, "probe_sweep: no models available");
  const auto baseline_state = init_model<float>(*shared, options.baseline_seed);
  ProbeModel base;
  base.label = "random-init";
  curve.baseline = curve_point(base, probe_model(baseline_state, feature, pool, workers, base.label));
  return curve;
}

// ----------------------------------------------------------------------------

nlohmann::json probe_to_json(const TrainedProbe& p) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"feature", std::string(feature_name(p.feature))},
          {"kind", std::string(probe_kind_name(p.kind))},
          {"layer", p.layer},
          {"slot", p.slot},
          {"dim", p.dim},
          {"width", p.width},
          {"weights", p.weights},
          {"bias", p.bias},
          {"train_loss", num(p.train_loss)},
          {"test_loss", num(p.test_loss)},
          {"objective", num(p.objective)},
          {"iterations", p.iterations},
          {"converged", p.converged},
          {"degenerate", p.degenerate},
          {"provenance", p.provenance}};
}

TrainedProbe probe_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  TrainedProbe p;
  p.feature = parse_feature(j.at("feature").get<std::string>());
  p.kind = probe_kind_for(p.feature);
  p.layer = j.at("layer").get<int>();
  p.slot = j.at("slot").get<int>();
  p.dim = j.at("dim").get<int>();
  p.width = j.at("width").get<int>();
  p.weights = j.at("weights").get<std::vector<double>>();
  p.bias = j.at("bias").get<std::vector<double>>();
  p.train_loss = num(j.at("train_loss"));
  p.test_loss = num(j.at("test_loss"));
  p.objective = num(j.value("objective", nlohmann::json(nullptr)));
  p.iterations = j.value("iterations", 0);
  p.converged = j.value("converged", false);
  p.degenerate = j.value("degenerate", false);
  p.provenance = j.value("provenance", "");
  return p;
}

namespace {

nlohmann::json point_to_json(const ProbeCurvePoint& pt) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  auto arr = nlohmann::json::array();
  for (double v : pt.slot_test_losses) arr.push_back(num(v));
  return {{"step", pt.step},
          {"x", pt.x},
          {"val_loss", num(pt.val_loss)},
          {"slot_test_losses", arr},
          {"slot_layers", pt.slot_layers},
          {"thirds", {num(pt.thirds[0]), num(pt.thirds[1]), num(pt.thirds[2])}}};
}

ProbeCurvePoint point_from_json(const nlohmann::json& j) {
  auto num = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  ProbeCurvePoint pt;
  pt.step = j.at("step").get<std::int64_t>();
  pt.x = j.at("x").get<double>();
  pt.val_loss = num(j.at("val_loss"));
  for (const auto& v : j.at("slot_test_losses")) pt.slot_test_losses.push_back(num(v));
  pt.slot_layers = j.at("slot_layers").get<std::vector<int>>();
  for (std::size_t k = 0; k < 3; ++k) pt.thirds[k] = num(j.at("thirds").at(k));
  return pt;
}

}  // namespace

nlohmann::json probe_curve_to_json(const ProbeCurve& c) {
  nlohmann::json j;
  j["format"] = "qf-probe-curve/1";
  j["task"] = std::string(task_name(c.task));
  j["input_size"] = c.input_size;
  j["feature"] = std::string(feature_name(c.feature));
  j["points"] = nlohmann::json::array();
  for (const auto& p : c.points) j["points"].push_back(point_to_json(p));
  j["baseline"] = point_to_json(c.baseline);
  j["gaps"] = c.gaps;
  return j;
}

ProbeCurve probe_curve_from_json(const nlohmann::json& j) {
  ProbeCurve c;
  c.task = parse_task(j.at("task").get<std::string>());
  c.input_size = j.at("input_size").get<int>();
  c.feature = parse_feature(j.at("feature").get<std::string>());
  for (const auto& p : j.at("points")) c.points.push_back(point_from_json(p));
  c.baseline = point_from_json(j.at("baseline"));
  c.gaps = j.value("gaps", std::vector<std::string>{});
  return c;
}

template ActivationSet collect_activations<float>(const ModelState<float>&, std::span<const Example>, FeatureId,
                                                  std::optional<int>, std::optional<int>, const std::string&);
template ActivationSet collect_activations<double>(const ModelState<double>&, std::span<const Example>, FeatureId,
                                                   std::optional<int>, std::optional<int>, const std::string&);

}  // namespace qf
