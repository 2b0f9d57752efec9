#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "qf/ablation.hpp"
#include "qf/checkpoint.hpp"
#include "qf/io.hpp"
#include "qf/probes.hpp"
#include "qf/report.hpp"
#include "qf/sweep.hpp"
#include "qf/tasks.hpp"
#include "qf/trainer.hpp"

using namespace qf;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

fs::path g_work;
bool g_reuse = false;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence() {
  std::size_t mismatches = 0, checked = 0;
  std::ostringstream per_task;
  auto run_task = [&](TaskId task, int n, std::uint64_t stream) {
    std::size_t bad = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
      const auto inst = sample_instance(task, n, derive_seed(0xacce, stream, s));
      bool ok = inst.target == oracle::solve(inst);
      if (task == TaskId::kTopologicalSort) {
        ok = ok && oracle::valid_topological_order(std::get<GraphPayload>(inst.payload), inst.target);
      }
      bad += !ok;
      ++checked;
    }
    mismatches += bad;
    per_task << ' ' << task_name(task) << '(' << n << ")=" << bad;
  };
  std::uint64_t stream = 0;
  for (auto task : kAllTasks) run_task(task, paper_input_sizes(task).front(), stream++);
  // Exhaustive-subset MST reference at the largest size it can enumerate.
  run_task(TaskId::kMst, 7, stream++);
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over " + std::to_string(checked) +
                               " instances;" + per_task.str()};
}

Outcome gradient_correctness() {
  ModelConfig c;
  c.model_dim = 8;
  c.n_layers = 4;
  c.n_heads = 4;
  c.vocab_size = 7;
  c.max_seq_len = 12;
  const auto s = init_model<double>(c, 2024);
  const auto batch = gradcheck::random_batch(3, 12, 5, 7, 99);
  const auto errors = gradcheck::check(s, batch, 1e-4, 1e-6);
  double worst = 0;
  std::size_t params = 0;
  std::ostringstream os;
  for (const auto& [name, e] : errors) {
    worst = std::max(worst, e.max_relative);
    params += e.checked;
    os << ' ' << name << '=' << fmt("%.1e", e.max_relative);
  }
  return {worst < 1e-4 && errors.size() == 12,
          "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(params) + " parameters;" + os.str()};
}

Outcome schedule_conformance() {
  bool ok = true;
  std::ostringstream os;
  for (double peak : {1e-1, 1e-2, 1e-3, 1e-4}) {
    for (std::int64_t total : {10, 1000, 760, 100000}) {
      const Schedule s{peak, total};
      const double start = lr_at(0, s), top = lr_at(total / 10, s), end = lr_at(total, s);
      auto close = [](double a, double b) { return std::abs(a - b) <= 4 * std::numeric_limits<double>::epsilon() * b; };
      ok = ok && close(start, 0.01 * peak) && close(top, peak) && close(end, 0.1 * peak);
    }
  }
  const Schedule ref{1e-3, 1000};
  os << "lr(0)=" << lr_at(0, ref) << " lr(100)=" << lr_at(100, ref) << " lr(550)=" << lr_at(550, ref)
     << " lr(1000)=" << lr_at(1000, ref);
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// The desk-scale addition run shared by the learning, transition, probe and
// ablation checks.

struct DeskRun {
  RunConfig config;
  RunRecord record;
  fs::path dir;
  double plateau = std::nan("");
};

DeskRun& desk_run() {
  static std::optional<DeskRun> run;
  if (run) return *run;
  DeskRun d;
  d.dir = g_work / "addition8";
  d.config.task = TaskId::kAddition;
  d.config.input_size = 8;
  d.config.model.model_dim = 64;
  d.config.model.n_layers = 4;
  d.config.model.n_heads = 4;
  d.config.batch_size = 64;
  d.config.peak_lr = 1.5e-3;
  d.config.total_steps = 760;
  d.config.data_seed = 1;
  d.config.init_seed = 1;
  d.config.eval_points = 50;
  d.config.checkpoint_at_evals = true;
  d.config.out_dir = d.dir;
  const auto record_path = d.dir / "record.json";
  bool loaded = false;
  if (g_reuse && fs::exists(record_path)) {
    d.record = run_record_from_json(nlohmann::json::parse(read_file(record_path)));
    loaded = d.record.completed && d.record.config_hash == run_config_hash(d.config);
  }
  if (!loaded) {
    fs::remove_all(d.dir);
    d.record = train_run(d.config);
  }
  run = std::move(d);
  return *run;
}

std::vector<Snapshot> post_warmup(const DeskRun& d) {
  const Schedule s{d.config.peak_lr, d.config.total_steps};
  std::vector<Snapshot> out;
  for (const auto& snap : d.record.snapshots) {
    if (snap.step >= s.warmup_steps()) out.push_back(snap);
  }
  return out;
}

Outcome task_learning() {
  const auto& d = desk_run();
  const double acc = d.record.test.accuracy;
  return {acc >= 0.99 && !d.record.diverged,
          "test exact match " + fmt("%.4f", acc) + " after " + std::to_string(d.config.total_steps) +
              " steps (d=64, L=4, batch 64, " + std::to_string(d.record.train_examples) + " training examples, " +
              fmt("%.0f", d.record.wall_seconds) + " s)"};
}

Outcome single_run_transition() {
  auto& d = desk_run();
  const auto post = post_warmup(d);
  if (post.size() < 5) return {false, "too few post-warmup evaluations"};
  const std::size_t head = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(post.size())));
  std::vector<double> early;
  for (std::size_t i = 0; i < head; ++i) early.push_back(post[i].val_loss);
  d.plateau = median(early);
  double max_dev = 0;
  for (double v : early) max_dev = std::max(max_dev, std::abs(v - d.plateau));
  const double final_loss = post.back().val_loss;
  const bool flat = max_dev <= 0.05;
  const bool fell = final_loss <= d.plateau / 10;

  const auto t = detect_transition(d.record);
  bool single = false;
  std::int64_t threshold_step = -1;
  if (t.found) {
    threshold_step = static_cast<std::int64_t>(t.x);
    // No second threshold after the first.
    std::vector<double> x, y;
    for (const auto& s : d.record.snapshots) {
      if (s.step >= threshold_step) {
        x.push_back(static_cast<double>(s.step));
        y.push_back(s.val_loss);
      }
    }
    single = x.size() < 4 || !detect_transition(x, y).found;
  }
  std::ostringstream os;
  os << "plateau " << fmt("%.4f", d.plateau) << " over the first " << head << " of " << post.size()
     << " post-warmup evals (max deviation " << fmt("%.4f", max_dev) << "), final " << fmt("%.2e", final_loss)
     << " (ratio " << fmt("%.1f", d.plateau / final_loss) << "x), threshold at step " << threshold_step
     << (single ? " (unique)" : " (not unique)");
  return {flat && fell && t.found && single, os.str()};
}

Outcome quiet_features() {
  auto& d = desk_run();
  if (std::isnan(d.plateau)) single_run_transition();
  std::map<std::int64_t, std::string> files(d.record.checkpoints.begin(), d.record.checkpoints.end());
  std::vector<ProbeModel> models;
  for (const auto& s : d.record.snapshots) {
    ProbeModel m;
    m.step = s.step;
    m.x = static_cast<double>(s.step);
    m.val_loss = s.val_loss;
    const auto it = files.find(s.step);
    if (it != files.end()) m.state = read_checkpoint(d.dir / it->second).state;
    models.push_back(std::move(m));
  }
  const auto pool = build_probe_pool(run_dataset(d.config));
  ProbeSweepOptions opt;
  opt.keep_probes = false;
  const auto curve = probe_sweep(TaskId::kAddition, 8, FeatureId::kCarry, models, pool, opt);
  auto j = probe_curve_to_json(curve);
  j["config_hash"] = "acceptance";
  j["run_hash"] = d.record.config_hash;
  atomic_write_file(g_work / "probe_curve.json", j.dump(2) + "\n");

  const double base = curve.baseline.thirds[0];
  std::int64_t hit = -1;
  double hit_loss = 0, hit_val = 0;
  for (const auto& p : curve.points) {
    if (p.thirds[0] < base - 0.2 && p.val_loss >= 0.5 * d.plateau) {
      hit = p.step;
      hit_loss = p.thirds[0];
      hit_val = p.val_loss;
      break;
    }
  }
  std::ostringstream os;
  os << "baseline Beginning-third probe loss " << fmt("%.3f", base) << ", " << curve.points.size()
     << " checkpoints, " << curve.gaps.size() << " gaps; ";
  if (hit >= 0) {
    os << "first quiet checkpoint at step " << hit << ": probe " << fmt("%.3f", hit_loss) << ", val loss "
       << fmt("%.3f", hit_val) << " (plateau " << fmt("%.3f", d.plateau) << ")";
  } else {
    os << "no checkpoint with probe < baseline - 0.2 while val loss >= 0.5 x plateau";
  }
  return {hit >= 0 && curve.gaps.empty(), os.str()};
}

Outcome ablation_geometry() {
  Rng rng(0x9e0);
  double worst_plane = 0, worst_dist = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = static_cast<int>(rng.uniform_int(1, 512));
    std::vector<double> x(d), w(d);
    const double xs = std::exp(rng.normal()), ws = std::exp(rng.normal());
    for (auto& v : x) v = xs * rng.normal();
    for (auto& v : w) v = ws * rng.normal();
    const double b = ws * rng.normal();
    const auto p = ablate_direction(x, w, b);
    double wx = b, wp = b, ww = 0, dist = 0;
    for (int k = 0; k < d; ++k) {
      wx += w[k] * x[k];
      wp += w[k] * p[k];
      ww += w[k] * w[k];
      dist += (x[k] - p[k]) * (x[k] - p[k]);
    }
    const double expect = std::abs(wx) / std::sqrt(ww);
    worst_plane = std::max(worst_plane, std::abs(wp));
    if (expect > 0) worst_dist = std::max(worst_dist, std::abs(std::sqrt(dist) - expect) / expect);
  }
  return {worst_plane < 1e-5 && worst_dist < 1e-6, "max |w.x*+b| " + fmt("%.2e", worst_plane) +
                                                       ", max relative distance error " + fmt("%.2e", worst_dist) +
                                                       " over 10000 triples, d in [1, 512]"};
}

Outcome causal_ablation() {
  auto& d = desk_run();
  const auto final_state = read_checkpoint(d.dir / "final.qfc").state;
  const auto ds = run_dataset(d.config);
  const auto pool = build_probe_pool(ds);
  AblationPlan plan;
  plan.task = TaskId::kAddition;
  plan.feature = FeatureId::kCarry;
  plan.probes = select_probes_for_model(final_state, FeatureId::kCarry, pool);
  plan.trials = 32;
  plan.seed = 0x61626c61;
  const auto feature = run_with_ablation(final_state, plan, std::span<const Example>(ds.test));
  auto random_plan = plan;
  random_plan.mode = AblationMode::kRandom;
  const auto random = random_ablation(final_state, random_plan, std::span<const Example>(ds.test));
  const auto sig = bootstrap_significance(feature.ablated, random.trials, 100000, plan.seed);
  auto j = ablation_report(TaskId::kAddition, 8, FeatureId::kCarry, feature, random, sig);
  atomic_write_file(g_work / "ablation.json", j.dump(2) + "\n");
  double random_mean = 0;
  for (const auto& t : random.trials) random_mean += t.accuracy;
  random_mean /= static_cast<double>(random.trials.size());
  std::ostringstream os;
  os << "baseline " << fmt("%.3f", feature.baseline.accuracy) << ", carry ablation "
     << fmt("%.3f", feature.ablated.accuracy) << ", random mean " << fmt("%.3f", random_mean) << " (32 trials); delta "
     << fmt("%+.3f", sig.delta_accuracy) << " CI [" << fmt("%.3f", sig.ci_low) << ", " << fmt("%.3f", sig.ci_high)
     << "], p = " << fmt("%.2e", sig.p_value) << " (" << sig.resamples << " resamples)";
  return {feature.ablated.accuracy < random_mean && sig.delta_accuracy < 0 && sig.p_value < 0.001, os.str()};
}

ProbeDataset synthetic(std::size_t rows, int dim) {
  ProbeDataset d;
  d.dim = dim;
  d.x.resize(rows * dim);
  d.y.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) d.example_index.push_back(i);
  return d;
}

Outcome probe_objectives() {
  Rng rng(0x9b0);
  auto separable = [&](std::size_t rows) {
    auto d = synthetic(rows, 2);
    for (std::size_t i = 0; i < rows; ++i) {
      double a, b;
      do {
        a = 2 * rng.uniform() - 1;
        b = 2 * rng.uniform() - 1;
      } while (std::abs(a - 0.5 * b) < 0.05);
      d.x[2 * i] = a;
      d.x[2 * i + 1] = b;
      d.y[i] = a - 0.5 * b > 0;
    }
    return d;
  };
  auto noise = [&](std::size_t rows) {
    auto d = synthetic(rows, 16);
    for (auto& v : d.x) v = rng.normal();
    for (auto& v : d.y) v = rng.bernoulli(0.5);
    return d;
  };
  ProbeSpec logistic;
  const auto sep = train_probe(logistic, separable(1000), nullptr);
  const double sep_test = probe_loss(sep, separable(1000));
  const auto rnd = train_probe(logistic, noise(10000), nullptr);
  const double rnd_test = probe_loss(rnd, noise(1000));

  ProbeSpec ols;
  ols.feature = FeatureId::kMaxEndingHere;
  ols.kind = ProbeKind::kRegression;
  double worst = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const int dim = 8 << trial;
    auto d = synthetic(4 * static_cast<std::size_t>(dim), dim);
    std::vector<double> w(dim);
    for (auto& v : w) v = rng.normal();
    const double b = rng.normal();
    for (std::size_t i = 0; i < d.rows(); ++i) {
      double y = b;
      for (int k = 0; k < dim; ++k) {
        d.x[i * dim + k] = rng.normal();
        y += w[k] * d.x[i * dim + k];
      }
      d.y[i] = y;
    }
    const auto p = train_probe(ols, d);
    for (int k = 0; k < dim; ++k) worst = std::max(worst, std::abs(p.weights[k] - w[k]));
    worst = std::max(worst, std::abs(p.bias[0] - b));
  }
  const bool ok = sep_test < 0.01 && std::abs(rnd_test - std::log(2.0)) <= 0.05 && worst < 1e-6;
  return {ok, "separable test CE " + fmt("%.2e", sep_test) + ", random-label test CE " + fmt("%.4f", rnd_test) +
                  " (ln 2 = 0.6931), OLS max coefficient error " + fmt("%.2e", worst)};
}

Outcome mini_sweep() {
  BudgetGrid grid;
  grid.budgets = BudgetGrid::half_decades(10, 12.5);
  grid.axes.model_dims = {8, 16, 32, 64, 128};
  grid.axes.n_layers = {4};
  grid.axes.batch_sizes = {64};
  grid.axes.peak_lrs = {1.5e-3};
  std::vector<std::optional<std::size_t>> positions;
  std::ostringstream os;
  std::size_t runs = 0;
  bool reported = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto dir = g_work / ("sweep_seed" + std::to_string(seed));
    if (!g_reuse) fs::remove_all(dir);
    SweepOptions opt;
    opt.results_dir = dir;
    opt.data_seed = seed;
    const auto out = run_sweep(TaskId::kAddition, 8, grid, opt);
    runs += out.runs.size();
    const auto& t = out.frontier.transition;
    std::optional<std::size_t> pos;
    if (t.found) {
      const auto it = std::find(grid.budgets.begin(), grid.budgets.end(), t.x);
      if (it != grid.budgets.end()) pos = static_cast<std::size_t>(it - grid.budgets.begin());
    }
    positions.push_back(pos);
    os << " seed " << seed << ": [";
    for (std::size_t i = 0; i < out.frontier.isotonic_losses.size(); ++i) {
      os << (i ? " " : "") << fmt("%.3f", out.frontier.points[i].val_loss);
    }
    os << "] isotonic [";
    for (std::size_t i = 0; i < out.frontier.isotonic_losses.size(); ++i) {
      os << (i ? " " : "") << fmt("%.3f", out.frontier.isotonic_losses[i]);
    }
    os << "] -> " << (pos ? "position " + std::to_string(*pos) : std::string("none")) << ';';
    const auto files = emit_report(PlotKind::kFrontier, dir, dir / "report");
    reported = reported && files.size() >= 2;
  }
  bool stable = true;
  for (const auto& a : positions) {
    for (const auto& b : positions) {
      stable = stable && a && b && (*a > *b ? *a - *b : *b - *a) <= 1;
    }
  }
  return {stable && reported, std::to_string(runs) + " runs;" + os.str() + (reported ? " reports emitted" : "")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = "acceptance_work";
  std::string only;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_flag("--reuse", g_reuse, "reuse a completed desk run and sweep results in --work");
  CLI11_PARSE(app, argc, argv);
  g_work = fs::absolute(work);
  if (!g_reuse) fs::remove_all(g_work);
  fs::create_directories(g_work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"gradient correctness", gradient_correctness},
      {"schedule conformance", schedule_conformance},
      {"desk-scale task learning", task_learning},
      {"single-run phase transition", single_run_transition},
      {"quiet-feature detection", quiet_features},
      {"ablation geometry", ablation_geometry},
      {"causal ablation direction", causal_ablation},
      {"probe objective correctness", probe_objectives},
      {"mini-sweep frontier", mini_sweep},
  };
  std::set<int> selected;
  std::stringstream ss(only);
  for (std::string tok; std::getline(ss, tok, ',');) selected.insert(std::stoi(tok));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("[%s] C%d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, selected.empty() ? criteria.size() : selected.size());
  return failures == 0 ? 0 : 1;
}
