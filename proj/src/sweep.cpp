#include "qf/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "qf/checkpoint.hpp"
#include "qf/error.hpp"
#include "qf/io.hpp"
#include "qf/probes.hpp"
#include "qf/random.hpp"

namespace qf {

std::vector<double> BudgetGrid::half_decades(double lo, double hi) {
  require(hi >= lo, ErrorKind::kConfig, "budget range is empty");
  std::vector<double> out;
  const int count = static_cast<int>(std::lround((hi - lo) * 2.0));
  for (int k = 0; k <= count; ++k) out.push_back(std::pow(10.0, lo + 0.5 * k));
  return out;
}

void BudgetGrid::validate() const {
  require(!budgets.empty(), ErrorKind::kConfig, "budget grid has no budgets");
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    require(budgets[i] > 0, ErrorKind::kConfig, "budgets must be positive");
    require(i == 0 || budgets[i] > budgets[i - 1], ErrorKind::kConfig, "budgets must be strictly ascending");
  }
  require(!axes.model_dims.empty() && !axes.n_layers.empty() && !axes.batch_sizes.empty() && !axes.peak_lrs.empty(),
          ErrorKind::kConfig, "every grid axis needs at least one value");
}

int sequence_tokens(TaskId task, int input_size) {
  const int fixed = fixed_sequence_length(task, input_size);
  return fixed > 0 ? fixed : max_sequence_length(task, input_size);
}

std::vector<RunConfig> enumerate_grid(TaskId task, int input_size, double budget, const BudgetGrid& grid,
                                      std::uint64_t data_seed) {
  require(budget > 0, ErrorKind::kConfig, "budget must be positive");
  check_input_size(task, input_size);
  const int T = sequence_tokens(task, input_size);
  const long double space = instance_space_size(task, input_size);
  const std::int64_t cap = grid.step_cap(budget);
  std::vector<RunConfig> out;
  std::size_t too_small = 0, too_many = 0, too_much_data = 0, total = 0;
  for (int L : grid.axes.n_layers) {
    for (int d : grid.axes.model_dims) {
      for (int batch : grid.axes.batch_sizes) {
        for (double lr : grid.axes.peak_lrs) {
          ++total;
          RunConfig r;
          r.task = task;
          r.input_size = input_size;
          r.model.model_dim = d;
          r.model.n_layers = L;
          r.model.n_heads = grid.axes.n_heads;
          r.batch_size = batch;
          r.peak_lr = lr;
          r.data_seed = data_seed;
          r.init_seed = derive_seed(data_seed, 0x696e6974);
          r.eval_points = grid.eval_points;
          r.budget = budget;
          r.max_steps = cap;
          const ModelConfig mc = resolve_model_config(r);
          const double per_step = 6.0 * static_cast<double>(count_params(mc)) * batch * T;
          const double steps = std::floor(budget / per_step);
          if (steps < 1) {
            ++too_small;
            continue;
          }
          if (steps > static_cast<double>(cap)) {
            ++too_many;
            continue;
          }
          r.total_steps = static_cast<std::int64_t>(steps);
          const long double data = static_cast<long double>(batch) * r.total_steps + 2.0L * r.eval_examples;
          if (data > space) {
            ++too_much_data;
            continue;
          }
          out.push_back(r);
        }
      }
    }
  }
  if (out.empty()) {
    std::ostringstream msg;
    msg << "no grid configuration fits budget " << budget << " for " << task_name(task) << " (n=" << input_size << "): "
        << total << " candidates, " << too_small << " with < 1 step, " << too_many << " above the " << cap
        << "-step cap, " << too_much_data << " needing more distinct examples than the task has";
    fail(ErrorKind::kConfig, msg.str());
  }
  return out;
}

// ----------------------------------------------------------------------------

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double safe_log(double v) { return std::log(std::max(v, 1e-12)); }

// OLS slope of log y on log x over [b, e).
double loglog_slope(std::span<const double> x, std::span<const double> y, std::size_t b, std::size_t e) {
  if (e - b < 2) return 0;
  double mx = 0, my = 0;
  for (std::size_t i = b; i < e; ++i) {
    mx += safe_log(x[i]);
    my += safe_log(y[i]);
  }
  const double n = static_cast<double>(e - b);
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = b; i < e; ++i) {
    const double dx = safe_log(x[i]) - mx;
    sxy += dx * (safe_log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxx > 0 ? sxy / sxx : 0;
}

}  // namespace

Transition detect_transition(std::span<const double> x, std::span<const double> y, const TransitionOptions& opt) {
  require(x.size() == y.size(), ErrorKind::kShape, "detect_transition: x and y differ in length");
  require(x.size() >= 4, ErrorKind::kContract, "detect_transition needs at least 4 points");
  for (std::size_t i = 0; i < x.size(); ++i) {
    require(x[i] > 0 && (i == 0 || x[i] > x[i - 1]), ErrorKind::kContract, "detect_transition: x must be positive and ascending");
  }
  Transition t;
  const std::size_t n = y.size();
  for (std::size_t k = std::max<std::size_t>(1, opt.min_plateau); k < n; ++k) {
    const double plateau = median(std::vector<double>(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(k)));
    const double line = plateau - std::max(opt.relative_delta * plateau, opt.absolute_delta);
    if (!(y[k] < line)) continue;
    bool stays = true;
    for (std::size_t j = k + 1; j < n && stays; ++j) stays = y[j] < line;
    if (!stays) continue;
    const double slow = loglog_slope(x, y, 0, k);
    const double local = (safe_log(y[k]) - safe_log(y[k - 1])) / (safe_log(x[k]) - safe_log(x[k - 1]));
    if (!(local < 0 && local <= opt.kink_ratio * std::min(slow, 0.0))) continue;
    t.found = true;
    t.index = k;
    t.x = x[k];
    t.plateau = plateau;
    t.slow_slope = slow;
    t.fast_slope = loglog_slope(x, y, k - 1, n);
    return t;
  }
  return t;
}

Transition detect_transition(std::span<const ScalingPoint> points, const TransitionOptions& opt) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (!p.usable) continue;
    x.push_back(p.budget);
    y.push_back(p.val_loss);
  }
  return detect_transition(x, y, opt);
}

Transition detect_transition(std::span<const Snapshot> snapshots, std::int64_t min_step, const TransitionOptions& opt) {
  std::vector<double> x, y;
  for (const auto& s : snapshots) {
    if (s.step < std::max<std::int64_t>(min_step, 1)) continue;
    x.push_back(static_cast<double>(s.step));
    y.push_back(s.val_loss);
  }
  return detect_transition(x, y, opt);
}

Transition detect_transition(const RunRecord& run, const TransitionOptions& opt) {
  const Schedule schedule{run.config.peak_lr, run.config.total_steps};
  const auto from = std::max<std::int64_t>(schedule.warmup_steps(), 1);
  const auto usable = std::count_if(run.snapshots.begin(), run.snapshots.end(),
                                    [&](const Snapshot& s) { return s.step >= from; });
  if (usable < 4) return {};
  return detect_transition(std::span<const Snapshot>(run.snapshots), from, opt);
}

std::vector<double> isotonic_non_increasing(std::span<const double> y) {
  // Blocks of (sum, count); merge while a later block has a larger mean.
  std::vector<std::pair<double, std::size_t>> blocks;
  for (double v : y) {
    blocks.emplace_back(v, 1);
    while (blocks.size() > 1) {
      const auto& b = blocks[blocks.size() - 1];
      const auto& a = blocks[blocks.size() - 2];
      if (b.first / static_cast<double>(b.second) <= a.first / static_cast<double>(a.second)) break;
      const std::pair<double, std::size_t> merged{a.first + b.first, a.second + b.second};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::vector<double> out;
  for (const auto& [sum, count] : blocks) out.insert(out.end(), count, sum / static_cast<double>(count));
  return out;
}

// ----------------------------------------------------------------------------

namespace {

double final_val_loss(const RunRecord& r) { return r.snapshots.empty() ? std::nan("") : r.snapshots.back().val_loss; }

bool usable_run(const RunRecord& r) { return r.completed && !r.diverged && std::isfinite(final_val_loss(r)); }

}  // namespace

FrontierReport build_frontier(TaskId task, int input_size, const BudgetGrid& grid, std::span<const RunRecord> runs,
                              std::uint64_t data_seed) {
  FrontierReport f;
  f.task = task;
  f.input_size = input_size;
  f.data_seed = data_seed;
  f.grid_hash = hex64(fnv1a64(budget_grid_to_json(grid).dump()));
  std::map<std::pair<int, int>, SizeFrontier> sizes;
  for (double budget : grid.budgets) {
    ScalingPoint pt;
    pt.budget = budget;
    const RunRecord* best = nullptr;
    std::map<std::pair<int, int>, double> size_best;
    for (const auto& r : runs) {
      if (r.config.budget != budget || r.config.task != task || r.config.input_size != input_size) continue;
      ++pt.runs;
      if (!usable_run(r)) {
        ++pt.diverged;
        continue;
      }
      const double loss = final_val_loss(r);
      // Ties resolved by config hash so the result does not depend on run order.
      if (!best || loss < final_val_loss(*best) || (loss == final_val_loss(*best) && r.config_hash < best->config_hash)) {
        best = &r;
      }
      const auto key = std::make_pair(r.config.model.n_layers, r.config.model.model_dim);
      auto it = size_best.find(key);
      if (it == size_best.end() || loss < it->second) size_best[key] = loss;
    }
    if (best) {
      pt.usable = true;
      pt.best = best->config;
      pt.best_hash = best->config_hash;
      pt.val_loss = final_val_loss(*best);
      pt.test_accuracy = best->test.accuracy;
      pt.test_loss = best->test.loss;
      pt.dataset_size = best->train_examples;
    }
    f.points.push_back(pt);
    for (const auto& [key, loss] : size_best) {
      auto& s = sizes[key];
      s.n_layers = key.first;
      s.model_dim = key.second;
      s.label = "d" + std::to_string(key.second) + "-L" + std::to_string(key.first);
      s.budgets.push_back(budget);
      s.val_losses.push_back(loss);
    }
  }
  std::vector<double> xs, ys;
  for (const auto& p : f.points) {
    if (!p.usable) continue;
    xs.push_back(p.budget);
    ys.push_back(p.val_loss);
  }
  f.isotonic_losses = isotonic_non_increasing(ys);
  if (xs.size() >= 4) f.transition = detect_transition(xs, f.isotonic_losses);
  for (auto& [key, s] : sizes) f.fixed_size.push_back(std::move(s));
  return f;
}

SweepOutcome run_sweep(TaskId task, int input_size, const BudgetGrid& grid, const SweepOptions& options) {
  grid.validate();
  std::vector<RunConfig> jobs;
  for (double budget : grid.budgets) {
    auto configs = enumerate_grid(task, input_size, budget, grid, options.data_seed);
    jobs.insert(jobs.end(), configs.begin(), configs.end());
  }
  SweepOutcome out;
  out.runs.resize(jobs.size());
  std::vector<std::uint8_t> done(jobs.size(), 0);
  const auto runs_dir = options.results_dir / "runs";
  if (!options.results_dir.empty()) {
    std::filesystem::create_directories(runs_dir);
    atomic_write_file(options.results_dir / "grid.json", budget_grid_to_json(grid).dump(2) + "\n");
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      const auto record = runs_dir / run_config_hash(jobs[i]) / "record.json";
      if (!std::filesystem::exists(record)) continue;
      auto rec = run_record_from_json(nlohmann::json::parse(read_file(record)));
      if (rec.completed) {
        out.runs[i] = std::move(rec);
        done[i] = 1;
      }
    }
  }
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!done[i]) pending.push_back(i);
  }
  out.executed = pending.size();
  const int workers = std::max(1, std::min<int>(options.workers > 0 ? options.workers : default_workers(),
                                                static_cast<int>(std::max<std::size_t>(1, pending.size()))));
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t k = next++; k < pending.size() && !error; k = next++) {
      const std::size_t i = pending[k];
      RunConfig cfg = jobs[i];
      if (!options.results_dir.empty()) cfg.out_dir = runs_dir / run_config_hash(cfg);
      try {
        out.runs[i] = train_run(cfg);
      } catch (...) {
        std::lock_guard lock(log_mutex);
        if (!error) error = std::current_exception();
        return;
      }
      if (options.verbose) {
        std::lock_guard lock(log_mutex);
        const auto& r = out.runs[i];
        std::cerr << "[sweep] budget " << cfg.budget << " d" << cfg.model.model_dim << " L" << cfg.model.n_layers << " B"
                  << cfg.batch_size << " lr " << cfg.peak_lr << " steps " << cfg.total_steps << " val "
                  << (r.snapshots.empty() ? std::nan("") : r.snapshots.back().val_loss) << " acc " << r.test.accuracy
                  << '\n';
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  // Records carry the config without its output directory.
  for (auto& r : out.runs) r.config.out_dir.clear();
  out.frontier = build_frontier(task, input_size, grid, out.runs, options.data_seed);
  if (!options.results_dir.empty()) {
    atomic_write_file(options.results_dir / "frontier.json", frontier_to_json(out.frontier).dump(2) + "\n");
  }
  return out;
}

// ----------------------------------------------------------------------------

nlohmann::json budget_grid_to_json(const BudgetGrid& g) {
  return {{"budgets", g.budgets},
          {"model_dims", g.axes.model_dims},
          {"n_layers", g.axes.n_layers},
          {"batch_sizes", g.axes.batch_sizes},
          {"peak_lrs", g.axes.peak_lrs},
          {"n_heads", g.axes.n_heads},
          {"max_steps", g.max_steps},
          {"max_steps_high", g.max_steps_high},
          {"eval_points", g.eval_points}};
}

BudgetGrid budget_grid_from_json(const nlohmann::json& j) {
  BudgetGrid g;
  if (j.contains("budgets")) {
    g.budgets = j.at("budgets").get<std::vector<double>>();
  } else if (j.contains("budget_exponents")) {
    const auto e = j.at("budget_exponents").get<std::vector<double>>();
    require(e.size() == 2, ErrorKind::kConfig, "budget_exponents must be [lo, hi]");
    g.budgets = BudgetGrid::half_decades(e[0], e[1]);
  }
  g.axes.model_dims = j.value("model_dims", g.axes.model_dims);
  g.axes.n_layers = j.value("n_layers", g.axes.n_layers);
  g.axes.batch_sizes = j.value("batch_sizes", g.axes.batch_sizes);
  g.axes.peak_lrs = j.value("peak_lrs", g.axes.peak_lrs);
  g.axes.n_heads = j.value("n_heads", g.axes.n_heads);
  g.max_steps = j.value("max_steps", g.max_steps);
  g.max_steps_high = j.value("max_steps_high", g.max_steps_high);
  g.eval_points = j.value("eval_points", g.eval_points);
  return g;
}

nlohmann::json transition_to_json(const Transition& t) {
  if (!t.found) return {{"found", false}};
  return {{"found", true},      {"index", t.index},           {"x", t.x},
          {"plateau", t.plateau}, {"slow_slope", t.slow_slope}, {"fast_slope", t.fast_slope}};
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double num_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Transition transition_from_json(const nlohmann::json& j) {
  Transition t;
  t.found = j.value("found", false);
  if (!t.found) return t;
  t.index = j.at("index").get<std::size_t>();
  t.x = j.at("x").get<double>();
  t.plateau = j.at("plateau").get<double>();
  t.slow_slope = j.at("slow_slope").get<double>();
  t.fast_slope = j.at("fast_slope").get<double>();
  return t;
}

}  // namespace

nlohmann::json frontier_to_json(const FrontierReport& f) {
  nlohmann::json j;
  j["format"] = "qf-frontier/1";
  j["task"] = std::string(task_name(f.task));
  j["input_size"] = f.input_size;
  j["data_seed"] = f.data_seed;
  j["grid_hash"] = f.grid_hash;
  j["points"] = nlohmann::json::array();
  for (const auto& p : f.points) {
    nlohmann::json pj{{"budget", p.budget},     {"usable", p.usable},          {"val_loss", num(p.val_loss)},
                      {"test_accuracy", num(p.test_accuracy)}, {"test_loss", num(p.test_loss)},
                      {"dataset_size", p.dataset_size}, {"runs", p.runs}, {"diverged", p.diverged},
                      {"best_hash", p.best_hash}};
    if (p.usable) pj["best"] = run_config_to_json(p.best);
    j["points"].push_back(pj);
  }
  auto iso = nlohmann::json::array();
  for (double v : f.isotonic_losses) iso.push_back(num(v));
  j["isotonic_losses"] = iso;
  j["transition"] = transition_to_json(f.transition);
  j["fixed_size"] = nlohmann::json::array();
  for (const auto& s : f.fixed_size) {
    auto losses = nlohmann::json::array();
    for (double v : s.val_losses) losses.push_back(num(v));
    j["fixed_size"].push_back({{"label", s.label},
                               {"model_dim", s.model_dim},
                               {"n_layers", s.n_layers},
                               {"budgets", s.budgets},
                               {"val_losses", losses}});
  }
  return j;
}

FrontierReport frontier_from_json(const nlohmann::json& j) {
  FrontierReport f;
  f.task = parse_task(j.at("task").get<std::string>());
  f.input_size = j.at("input_size").get<int>();
  f.data_seed = j.value("data_seed", std::uint64_t{0});
  f.grid_hash = j.value("grid_hash", "");
  for (const auto& pj : j.at("points")) {
    ScalingPoint p;
    p.budget = pj.at("budget").get<double>();
    p.usable = pj.at("usable").get<bool>();
    p.val_loss = num_from(pj.at("val_loss"));
    p.test_accuracy = num_from(pj.at("test_accuracy"));
    p.test_loss = num_from(pj.at("test_loss"));
    p.dataset_size = pj.at("dataset_size").get<std::size_t>();
    p.runs = pj.at("runs").get<std::size_t>();
    p.diverged = pj.at("diverged").get<std::size_t>();
    p.best_hash = pj.value("best_hash", "");
    if (pj.contains("best")) p.best = run_config_from_json(pj.at("best"));
    f.points.push_back(p);
  }
  for (const auto& v : j.at("isotonic_losses")) f.isotonic_losses.push_back(num_from(v));
  f.transition = transition_from_json(j.at("transition"));
  for (const auto& sj : j.at("fixed_size")) {
    SizeFrontier s;
    s.label = sj.at("label").get<std::string>();
    s.model_dim = sj.at("model_dim").get<int>();
    s.n_layers = sj.at("n_layers").get<int>();
    s.budgets = sj.at("budgets").get<std::vector<double>>();
    for (const auto& v : sj.at("val_losses")) s.val_losses.push_back(num_from(v));
    f.fixed_size.push_back(std::move(s));
  }
  return f;
}

}  // namespace qf
