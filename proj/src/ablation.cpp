#include "qf/ablation.hpp"

#include <algorithm>
#include <cmath>

#include "qf/error.hpp"
#include "qf/random.hpp"

namespace qf {

std::vector<double> ablate_direction(std::span<const double> x, std::span<const double> w, double b) {
  require(x.size() == w.size(), ErrorKind::kShape, "ablate_direction: dimension mismatch");
  double wx = b;
  double ww = 0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    wx += w[k] * x[k];
    ww += w[k] * w[k];
  }
  require(ww > 0, ErrorKind::kContract, "ablate_direction: zero weight vector");
  const double scale = wx / ww;
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t k = 0; k < w.size(); ++k) out[k] -= scale * w[k];
  return out;
}

std::vector<double> random_unit_vector(int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm = 0;
  while (norm == 0) {
    norm = 0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::vector<Intervention> plan_interventions(const AblationPlan& plan, const Example& example, int model_dim,
                                             std::span<const std::vector<double>> directions) {
  const auto ann = extract_features(example.instance);
  const auto& track = ann.track(plan.feature);
  std::vector<Intervention> out;
  for (std::size_t i = 0; i < plan.probes.size(); ++i) {
    const auto& p = plan.probes[i];
    require(p.feature == plan.feature && p.width == 1, ErrorKind::kConfig,
            "ablation plans take single-output probes of the planned feature");
    require(p.dim == model_dim, ErrorKind::kConfig, "probe dimension does not match the model");
    const FeaturePoint* pt = track.at_slot(p.slot);
    require(pt != nullptr, ErrorKind::kConfig, "feature undefined at probe slot " + std::to_string(p.slot));
    Intervention iv;
    iv.layer = p.layer;
    iv.position = static_cast<int>(pt->position);
    if (directions.empty()) {
      iv.direction = p.weights;
      iv.bias = p.bias.front();
    } else {
      iv.direction = directions[i];
      iv.bias = 0.0;
    }
    out.push_back(std::move(iv));
  }
  return out;
}

namespace {

void check_positions(const AblationPlan& plan, std::span<const Example> examples) {
  require(!examples.empty(), ErrorKind::kContract, "ablation: no examples");
  const auto ref = extract_features(examples.front().instance).track(plan.feature);
  for (const auto& ex : examples) {
    require(ex.instance.task == plan.task, ErrorKind::kConfig, "ablation examples do not match the plan's task");
    const auto tr = extract_features(ex.instance).track(plan.feature);
    for (const auto& p : plan.probes) {
      const auto* a = ref.at_slot(p.slot);
      const auto* b = tr.at_slot(p.slot);
      require(a && b && a->position == b->position, ErrorKind::kConfig,
              "ablation needs the probed slots at the same positions in every example");
    }
  }
}

}  // namespace

template <typename T>
AblationResult run_with_ablation(const ModelState<T>& state, const AblationPlan& plan, std::span<const Example> examples) {
  if (plan.mode == AblationMode::kRandom) return random_ablation(state, plan, examples);
  AblationResult res;
  res.mode = AblationMode::kFeature;
  res.baseline = evaluate(state, examples);
  if (plan.probes.empty()) {
    res.ablated = res.baseline;
    res.interventions.emplace_back();
    return res;
  }
  check_positions(plan, examples);
  for (const auto& p : plan.probes) {
    require(p.layer >= 0 && p.layer < state.config.n_layers, ErrorKind::kConfig, "probe layer outside the model");
  }
  auto ivs = plan_interventions(plan, examples.front(), state.config.model_dim);
  EvalOptions opts;
  opts.interventions = ivs;
  res.ablated = evaluate(state, examples, opts);
  res.interventions.push_back(std::move(ivs));
  return res;
}

template <typename T>
AblationResult random_ablation(const ModelState<T>& state, const AblationPlan& plan, std::span<const Example> examples) {
  require(plan.trials >= 1, ErrorKind::kContract, "random ablation needs at least one trial");
  AblationResult res;
  res.mode = AblationMode::kRandom;
  res.baseline = evaluate(state, examples);
  check_positions(plan, examples);
  const int d = state.config.model_dim;
  for (int t = 0; t < plan.trials; ++t) {
    Rng rng(derive_seed(plan.seed, 0x72616e64, static_cast<std::uint64_t>(t)));
    std::vector<std::vector<double>> dirs;
    for (std::size_t i = 0; i < plan.probes.size(); ++i) dirs.push_back(random_unit_vector(d, rng));
    auto ivs = plan_interventions(plan, examples.front(), d, dirs);
    EvalOptions opts;
    opts.interventions = ivs;
    res.trials.push_back(evaluate(state, examples, opts));
    res.interventions.push_back(std::move(ivs));
  }
  return res;
}

namespace {

double percentile(std::vector<double>& v, double q) {
  const auto k = static_cast<std::size_t>(std::clamp(q * static_cast<double>(v.size() - 1), 0.0,
                                                     static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

MeanCi bootstrap_mean_ci(std::span<const double> values, std::size_t resamples, std::uint64_t seed) {
  require(!values.empty() && resamples > 0, ErrorKind::kContract, "bootstrap_mean_ci: empty input");
  MeanCi out;
  double sum = 0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  Rng rng(derive_seed(seed, 0x63690000));
  std::vector<double> means(resamples);
  const auto n = static_cast<std::int64_t>(values.size());
  for (auto& m : means) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += values[static_cast<std::size_t>(rng.uniform_int(0, n - 1))];
    m = s / static_cast<double>(n);
  }
  out.low = percentile(means, 0.025);
  out.high = percentile(means, 0.975);
  return out;
}

BootstrapReport bootstrap_significance(const EvalReport& feature, std::span<const EvalReport> random,
                                       std::size_t resamples, std::uint64_t seed) {
  const std::size_t n = feature.correct.size();
  require(n > 0 && !random.empty(), ErrorKind::kContract, "bootstrap: empty inputs");
  require(resamples > 0, ErrorKind::kContract, "bootstrap: need at least one resample");
  require(feature.example_losses.size() == n, ErrorKind::kContract, "bootstrap: per-example losses missing");
  std::vector<double> acc_diff(n), loss_diff(n);
  for (const auto& r : random) {
    require(r.correct.size() == n && r.example_losses.size() == n, ErrorKind::kContract,
            "bootstrap: feature and random results cover different example sets");
  }
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0, loss = 0;
    for (const auto& r : random) {
      acc += r.correct[i];
      loss += r.example_losses[i];
    }
    const double k = static_cast<double>(random.size());
    acc_diff[i] = feature.correct[i] - acc / k;
    loss_diff[i] = feature.example_losses[i] - loss / k;
  }
  BootstrapReport rep;
  rep.resamples = resamples;
  for (std::size_t i = 0; i < n; ++i) {
    rep.delta_accuracy += acc_diff[i];
    rep.delta_loss += loss_diff[i];
  }
  rep.delta_accuracy /= static_cast<double>(n);
  rep.delta_loss /= static_cast<double>(n);

  Rng rng(derive_seed(seed, 0x626f6f74));
  std::vector<double> acc(resamples), loss(resamples);
  double acc_tail = 0, loss_tail = 0;
  const auto last = static_cast<std::int64_t>(n) - 1;
  for (std::size_t r = 0; r < resamples; ++r) {
    double a = 0, l = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, last));
      a += acc_diff[j];
      l += loss_diff[j];
    }
    a /= static_cast<double>(n);
    l /= static_cast<double>(n);
    acc[r] = a;
    loss[r] = l;
    acc_tail += a > 0 ? 1.0 : (a == 0 ? 0.5 : 0.0);
    loss_tail += l < 0 ? 1.0 : (l == 0 ? 0.5 : 0.0);
  }
  rep.p_value = acc_tail / static_cast<double>(resamples);
  rep.loss_p_value = loss_tail / static_cast<double>(resamples);
  rep.ci_low = percentile(acc, 0.025);
  rep.ci_high = percentile(acc, 0.975);
  rep.loss_ci_low = percentile(loss, 0.025);
  rep.loss_ci_high = percentile(loss, 0.975);
  return rep;
}

nlohmann::json ablation_report(TaskId task, int input_size, FeatureId feature, const AblationResult& feature_result,
                               const AblationResult& random_result, const BootstrapReport& sig, std::size_t resamples) {
  auto to_double = [](const std::vector<std::uint8_t>& v) { return std::vector<double>(v.begin(), v.end()); };
  auto column = [&](const std::vector<double>& correct, const std::vector<double>& losses, double accuracy, double loss,
                    std::uint64_t seed) {
    const auto a = bootstrap_mean_ci(correct, resamples, seed);
    const auto l = bootstrap_mean_ci(losses, resamples, seed + 1);
    return nlohmann::json{{"accuracy", 100.0 * accuracy},
                          {"accuracy_ci", {100.0 * a.low, 100.0 * a.high}},
                          {"loss", loss},
                          {"loss_ci", {l.low, l.high}}};
  };
  const auto& base = feature_result.baseline;
  const auto& abl = feature_result.ablated;
  const std::size_t n = base.correct.size();
  std::vector<double> pooled_acc(n, 0.0), pooled_loss(n, 0.0);
  double trial_acc = 0, trial_loss = 0;
  for (const auto& t : random_result.trials) {
    for (std::size_t i = 0; i < n; ++i) {
      pooled_acc[i] += t.correct[i];
      pooled_loss[i] += t.example_losses[i];
    }
    trial_acc += t.accuracy;
    trial_loss += t.loss;
  }
  const double k = static_cast<double>(std::max<std::size_t>(1, random_result.trials.size()));
  for (std::size_t i = 0; i < n; ++i) {
    pooled_acc[i] /= k;
    pooled_loss[i] /= k;
  }
  nlohmann::json j;
  j["format"] = "qf-ablation/1";
  j["task"] = std::string(task_name(task));
  j["input_size"] = input_size;
  j["feature"] = std::string(feature_name(feature));
  j["examples"] = n;
  j["baseline"] = column(to_double(base.correct), base.example_losses, base.accuracy, base.loss, 11);
  j["feature_ablation"] = column(to_double(abl.correct), abl.example_losses, abl.accuracy, abl.loss, 13);
  j["random_ablation"] = column(pooled_acc, pooled_loss, trial_acc / k, trial_loss / k, 17);
  j["random_ablation"]["trials"] = random_result.trials.size();
  auto trial_list = nlohmann::json::array();
  for (const auto& t : random_result.trials) trial_list.push_back({{"accuracy", 100.0 * t.accuracy}, {"loss", t.loss}});
  j["random_ablation"]["per_trial"] = trial_list;
  j["delta_accuracy_vs_random"] = 100.0 * sig.delta_accuracy;
  j["delta_accuracy_ci"] = {100.0 * sig.ci_low, 100.0 * sig.ci_high};
  j["p_value"] = sig.p_value;
  j["delta_loss_vs_random"] = sig.delta_loss;
  j["delta_loss_ci"] = {sig.loss_ci_low, sig.loss_ci_high};
  j["loss_p_value"] = sig.loss_p_value;
  j["bootstrap_resamples"] = sig.resamples;
  j["layers"] = nlohmann::json::array();
  if (!feature_result.interventions.empty()) {
    for (const auto& iv : feature_result.interventions.front()) {
      j["layers"].push_back({{"position", iv.position}, {"layer", iv.layer}});
    }
  }
  return j;
}

template AblationResult run_with_ablation<float>(const ModelState<float>&, const AblationPlan&, std::span<const Example>);
template AblationResult run_with_ablation<double>(const ModelState<double>&, const AblationPlan&, std::span<const Example>);
template AblationResult random_ablation<float>(const ModelState<float>&, const AblationPlan&, std::span<const Example>);
template AblationResult random_ablation<double>(const ModelState<double>&, const AblationPlan&, std::span<const Example>);

}  // namespace qf
