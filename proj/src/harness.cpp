#include "qf/harness.hpp"

#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>

#include "qf/ablation.hpp"
#include "qf/checkpoint.hpp"
#include "qf/dataset.hpp"
#include "qf/io.hpp"
#include "qf/probes.hpp"
#include "qf/random.hpp"

namespace qf {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kGeneration: return "generation";
    case ErrorKind::kStructure: return "structure";
    case ErrorKind::kEncoding: return "encoding";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kData: return "data";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return kExitConfig;
    case ErrorKind::kGeneration: return kExitGeneration;
    case ErrorKind::kStructure: return kExitStructure;
    case ErrorKind::kEncoding: return kExitEncoding;
    case ErrorKind::kParse: return kExitParse;
    case ErrorKind::kShape: return kExitShape;
    case ErrorKind::kData: return kExitData;
    case ErrorKind::kContract: return kExitContract;
    case ErrorKind::kNumeric: return kExitNumeric;
    case ErrorKind::kIo: return kExitIo;
  }
  return kExitInternal;
}

namespace {

constexpr std::array<Stage, 6> kStages = {Stage::kGenerate, Stage::kTrain,  Stage::kSweep,
                                          Stage::kProbe,    Stage::kAblate, Stage::kReport};

}  // namespace

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kGenerate: return "generate";
    case Stage::kTrain: return "train";
    case Stage::kSweep: return "sweep";
    case Stage::kProbe: return "probe";
    case Stage::kAblate: return "ablate";
    case Stage::kReport: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (auto s : kStages) {
    if (stage_name(s) == name) return s;
  }
  fail(ErrorKind::kConfig, "unknown stage '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  check_input_size(task, input_size);
  require(eval > 0, ErrorKind::kConfig, "eval must be positive");
  require(!out.empty(), ErrorKind::kConfig, "an output directory is required (--out)");
  switch (stage) {
    case Stage::kGenerate:
      require(train > 0, ErrorKind::kConfig, "generate needs --train > 0");
      break;
    case Stage::kTrain:
      require(model_dim > 0 && n_layers > 0 && n_heads > 0 && model_dim % n_heads == 0, ErrorKind::kConfig,
              "model_dim must be a positive multiple of n_heads");
      require(batch_size > 0, ErrorKind::kConfig, "batch_size must be positive");
      require(peak_lr > 0, ErrorKind::kConfig, "peak_lr must be positive");
      require(steps > 0 || budget > 0, ErrorKind::kConfig, "train needs --steps or --budget");
      break;
    case Stage::kSweep:
      require(grid.has_value(), ErrorKind::kConfig, "sweep needs a grid (config key 'grid' or --grid FILE)");
      break;
    case Stage::kProbe:
    case Stage::kAblate:
      require(!in.empty(), ErrorKind::kConfig, std::string(stage_name(stage)) + " needs --in RUN_DIR");
      require(feature_defined(task, feature), ErrorKind::kConfig,
              "feature '" + std::string(feature_name(feature)) + "' is not defined for " + std::string(task_name(task)));
      require(trials > 0 && resamples > 0, ErrorKind::kConfig, "trials and resamples must be positive");
      break;
    case Stage::kReport:
      require(!in.empty(), ErrorKind::kConfig, "report needs --in DIR");
      break;
  }
}

nlohmann::json experiment_to_json(const ExperimentConfig& c) {
  nlohmann::json j{{"stage", std::string(stage_name(c.stage))},
                   {"task", std::string(task_name(c.task))},
                   {"input_size", c.input_size},
                   {"seed", c.seed},
                   {"train", c.train},
                   {"eval", c.eval},
                   {"model_dim", c.model_dim},
                   {"n_layers", c.n_layers},
                   {"n_heads", c.n_heads},
                   {"batch_size", c.batch_size},
                   {"peak_lr", c.peak_lr},
                   {"steps", c.steps},
                   {"budget", c.budget},
                   {"checkpoints", c.checkpoints},
                   {"eval_points", c.eval_points},
                   {"feature", std::string(feature_name(c.feature))},
                   {"probe_steps", c.probe_steps},
                   {"trials", c.trials},
                   {"resamples", c.resamples},
                   {"ablation_seed", c.ablation_seed},
                   {"kind", std::string(plot_kind_name(c.kind))},
                   {"in", c.in.string()},
                   {"out", c.out.string()},
                   {"workers", c.workers},
                   {"verbose", c.verbose}};
  if (c.init_seed) j["init_seed"] = *c.init_seed;
  if (c.grid) j["grid"] = *c.grid;
  return j;
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kConfig, "experiment config must be a JSON object");
  static const std::set<std::string> known{"stage",  "task",       "input_size", "seed",        "init_seed", "train",
                                           "eval",   "model_dim",  "n_layers",   "n_heads",     "batch_size", "peak_lr",
                                           "steps",  "budget",     "checkpoints", "eval_points", "grid",      "feature",
                                           "probe_steps", "trials", "resamples", "ablation_seed", "kind",    "in",
                                           "out",    "workers",    "verbose"};
  for (const auto& [key, value] : j.items()) {
    require(known.count(key) > 0, ErrorKind::kConfig, "unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    if (j.contains("stage")) c.stage = parse_stage(j.at("stage").get<std::string>());
    if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
    c.input_size = j.value("input_size", c.input_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("init_seed")) c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.train = j.value("train", c.train);
    c.eval = j.value("eval", c.eval);
    c.model_dim = j.value("model_dim", c.model_dim);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.steps = j.value("steps", c.steps);
    c.budget = j.value("budget", c.budget);
    c.checkpoints = j.value("checkpoints", c.checkpoints);
    c.eval_points = j.value("eval_points", c.eval_points);
    if (j.contains("grid")) c.grid = j.at("grid");
    if (j.contains("feature")) c.feature = parse_feature(j.at("feature").get<std::string>());
    c.probe_steps = j.value("probe_steps", c.probe_steps);
    c.trials = j.value("trials", c.trials);
    c.resamples = j.value("resamples", c.resamples);
    c.ablation_seed = j.value("ablation_seed", c.ablation_seed);
    if (j.contains("kind")) c.kind = parse_plot_kind(j.at("kind").get<std::string>());
    c.in = j.value("in", std::string());
    c.out = j.value("out", std::string());
    c.workers = j.value("workers", c.workers);
    c.verbose = j.value("verbose", c.verbose);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config value has the wrong type: ") + e.what());
  }
  return c;
}

std::string experiment_hash(const ExperimentConfig& c) {
  auto j = experiment_to_json(c);
  for (const char* k : {"in", "out", "workers", "verbose"}) j.erase(k);
  return hex64(fnv1a64(j.dump()));
}

RunConfig run_config_for(const ExperimentConfig& c) {
  RunConfig r;
  r.task = c.task;
  r.input_size = c.input_size;
  r.model.model_dim = c.model_dim;
  r.model.n_layers = c.n_layers;
  r.model.n_heads = c.n_heads;
  r.batch_size = c.batch_size;
  r.peak_lr = c.peak_lr;
  r.data_seed = c.seed;
  r.init_seed = c.init_seed ? *c.init_seed : derive_seed(c.seed, 0x696e6974);
  r.eval_points = c.eval_points;
  r.checkpoint_at_evals = c.checkpoints;
  r.eval_examples = c.eval;
  r.budget = c.budget;
  r.total_steps = c.steps;
  if (r.total_steps == 0 && c.budget > 0) {
    const double per_step = 6.0 * static_cast<double>(count_params(resolve_model_config(r))) * r.batch_size *
                            sequence_tokens(c.task, c.input_size);
    r.total_steps = static_cast<std::int64_t>(std::floor(c.budget / per_step));
    require(r.total_steps >= 1, ErrorKind::kConfig, "budget is below one training step for this model");
  }
  return r;
}

// ----------------------------------------------------------------------------

namespace {

void write_experiment(const ExperimentConfig& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto j = experiment_to_json(c);
  j["config_hash"] = experiment_hash(c);
  atomic_write_file(dir / "experiment.json", j.dump(2) + "\n");
}

RunRecord load_run(const std::filesystem::path& dir) {
  const auto path = dir / "record.json";
  require(std::filesystem::exists(path), ErrorKind::kIo, "missing run record " + path.string());
  auto rec = run_record_from_json(nlohmann::json::parse(read_file(path)));
  require(rec.completed && !rec.diverged, ErrorKind::kData, "run in " + dir.string() + " did not complete cleanly");
  return rec;
}

void stage_generate(const ExperimentConfig& c) {
  const auto ds = build_dataset(c.task, c.input_size, c.train, c.seed, c.eval);
  write_dataset(ds, c.out, experiment_hash(c));
  write_experiment(c, c.out);
}

void stage_train(const ExperimentConfig& c) {
  RunConfig r = run_config_for(c);
  r.out_dir = c.out;
  TrainHooks hooks;
  hooks.verbose = c.verbose;
  write_experiment(c, c.out);
  const auto rec = train_run(r, hooks);
  if (c.verbose) std::cerr << "test accuracy " << rec.test.accuracy << " loss " << rec.test.loss << '\n';
  require(!rec.diverged, ErrorKind::kNumeric, "training diverged: " + rec.divergence);
}

void stage_sweep(const ExperimentConfig& c) {
  const BudgetGrid grid = budget_grid_from_json(*c.grid);
  grid.validate();
  // Fail on an infeasible grid before anything is written.
  for (double b : grid.budgets) enumerate_grid(c.task, c.input_size, b, grid, c.seed);
  SweepOptions opt;
  opt.results_dir = c.out;
  opt.workers = c.workers;
  opt.data_seed = c.seed;
  opt.verbose = c.verbose;
  write_experiment(c, c.out);
  const auto outcome = run_sweep(c.task, c.input_size, grid, opt);
  if (c.verbose) std::cerr << "sweep: " << outcome.executed << " runs trained, " << outcome.runs.size() << " total\n";
}

ProbePool pool_for(const RunRecord& rec) {
  const DatasetSplit ds = run_dataset(rec.config);
  return build_probe_pool(ds);
}

void stage_probe(const ExperimentConfig& c) {
  const auto rec = load_run(c.in);
  require(rec.config.task == c.task && rec.config.input_size == c.input_size, ErrorKind::kConfig,
          "run task/size differ from the probe configuration");
  const ProbePool pool = pool_for(rec);
  std::map<std::int64_t, std::string> files(rec.checkpoints.begin(), rec.checkpoints.end());
  std::vector<ProbeModel> models;
  for (const auto& s : rec.snapshots) {
    if (!c.probe_steps.empty() &&
        std::find(c.probe_steps.begin(), c.probe_steps.end(), s.step) == c.probe_steps.end()) {
      continue;
    }
    ProbeModel m;
    m.step = s.step;
    m.x = static_cast<double>(s.step);
    m.val_loss = s.val_loss;
    m.label = "step " + std::to_string(s.step);
    const auto it = files.find(s.step);
    if (it != files.end() && std::filesystem::exists(c.in / it->second)) {
      auto ck = read_checkpoint(c.in / it->second);
      require(ck.provenance == rec.config_hash, ErrorKind::kData,
              "checkpoint " + it->second + " belongs to run " + ck.provenance);
      m.state = std::move(ck.state);
    }
    models.push_back(std::move(m));
  }
  ProbeSweepOptions opt;
  opt.workers = c.workers;
  const ProbeCurve curve = probe_sweep(c.task, c.input_size, c.feature, models, pool, opt);
  std::filesystem::create_directories(c.out);
  auto j = probe_curve_to_json(curve);
  j["config_hash"] = experiment_hash(c);
  j["run_hash"] = rec.config_hash;
  atomic_write_file(c.out / "probe_curve.json", j.dump(2) + "\n");
  std::string store;
  for (const auto& p : curve.probes) store += probe_to_json(p).dump() + "\n";
  atomic_write_file(c.out / "probes.jsonl", store);
  write_experiment(c, c.out);
}

void stage_ablate(const ExperimentConfig& c) {
  const auto rec = load_run(c.in);
  require(rec.config.task == c.task && rec.config.input_size == c.input_size, ErrorKind::kConfig,
          "run task/size differ from the ablation configuration");
  const auto ck_path = c.in / "final.qfc";
  require(std::filesystem::exists(ck_path), ErrorKind::kIo, "missing final checkpoint " + ck_path.string());
  const auto ck = read_checkpoint(ck_path);
  const DatasetSplit ds = run_dataset(rec.config);
  const ProbePool pool = build_probe_pool(ds);
  AblationPlan plan;
  plan.task = c.task;
  plan.feature = c.feature;
  plan.probes = select_probes_for_model(ck.state, c.feature, pool, c.workers);
  plan.trials = c.trials;
  plan.seed = c.ablation_seed;
  const auto feature = run_with_ablation(ck.state, plan, std::span<const Example>(ds.test));
  AblationPlan random_plan = plan;
  random_plan.mode = AblationMode::kRandom;
  const auto random = random_ablation(ck.state, random_plan, std::span<const Example>(ds.test));
  const auto sig = bootstrap_significance(feature.ablated, random.trials, c.resamples, c.ablation_seed);
  auto j = ablation_report(c.task, c.input_size, c.feature, feature, random, sig);
  j["config_hash"] = experiment_hash(c);
  j["run_hash"] = rec.config_hash;
  j["probes"] = nlohmann::json::array();
  for (const auto& p : plan.probes) j["probes"].push_back(probe_to_json(p));
  std::filesystem::create_directories(c.out);
  atomic_write_file(c.out / "ablation.json", j.dump(2) + "\n");
  write_experiment(c, c.out);
}

void stage_report(const ExperimentConfig& c) {
  const auto files = emit_report(c.kind, c.in, c.out);
  for (const auto& f : files) std::cout << f.string() << '\n';
}

}  // namespace

void run_stage(const ExperimentConfig& c) {
  c.validate();
  switch (c.stage) {
    case Stage::kGenerate: stage_generate(c); break;
    case Stage::kTrain: stage_train(c); break;
    case Stage::kSweep: stage_sweep(c); break;
    case Stage::kProbe: stage_probe(c); break;
    case Stage::kAblate: stage_ablate(c); break;
    case Stage::kReport: stage_report(c); break;
  }
}

// ----------------------------------------------------------------------------

namespace {

struct Flags {
  std::string config;
  std::optional<std::string> task, feature, kind, grid, in, out;
  std::optional<int> input_size, model_dim, n_layers, n_heads, batch_size, eval_points, trials, workers;
  std::optional<std::uint64_t> seed, init_seed;
  std::optional<std::size_t> train, eval, resamples;
  std::optional<std::int64_t> steps;
  std::optional<double> peak_lr, budget;
  std::vector<double> budget_exponents;
  std::vector<std::int64_t> probe_steps;
  bool no_checkpoints = false;
  bool verbose = false;
};

template <typename T>
void add(CLI::App* app, const std::string& name, std::optional<T>& target, const std::string& help) {
  app->add_option_function<T>(name, [&target](const T& v) { target = v; }, help);
}

void register_flags(CLI::App* app, Flags& f) {
  std::vector<std::string> tasks, features;
  for (auto t : kAllTasks) tasks.emplace_back(task_name(t));
  app->add_option("--config", f.config, "experiment config file (JSON)");
  app->add_option_function<std::string>(
         "--task", [&f](const std::string& v) { f.task = v; }, "task name")
      ->check(CLI::IsMember(tasks));
  add(app, "--input-size", f.input_size, "input size n");
  add(app, "--seed", f.seed, "data seed");
  add(app, "--init-seed", f.init_seed, "model initialisation seed");
  add(app, "--train", f.train, "training examples (generate)");
  add(app, "--eval", f.eval, "validation and test examples");
  add(app, "--model-dim", f.model_dim, "residual width");
  add(app, "--layers", f.n_layers, "transformer blocks");
  add(app, "--heads", f.n_heads, "attention heads");
  add(app, "--batch", f.batch_size, "batch size");
  add(app, "--lr", f.peak_lr, "peak learning rate");
  add(app, "--steps", f.steps, "optimizer steps");
  add(app, "--budget", f.budget, "FLOPs budget (derives steps)");
  add(app, "--eval-points", f.eval_points, "log-spaced evaluations");
  app->add_flag("--no-checkpoints", f.no_checkpoints, "skip per-eval checkpoints");
  add(app, "--grid", f.grid, "budget grid JSON file (sweep)");
  app->add_option("--budget-exponents", f.budget_exponents, "sweep budgets 10^lo..10^hi in half decades")
      ->expected(2);
  add(app, "--feature", f.feature, "probe/ablation feature");
  app->add_option("--probe-steps", f.probe_steps, "checkpoint steps to probe");
  add(app, "--trials", f.trials, "random-direction trials");
  add(app, "--resamples", f.resamples, "bootstrap resamples");
  app->add_option_function<std::string>(
         "--kind", [&f](const std::string& v) { f.kind = v; }, "report kind")
      ->check(CLI::IsMember({"frontier", "single-run", "probe-thirds", "dataset-size"}));
  add(app, "--in", f.in, "input directory");
  add(app, "--out", f.out, "output directory");
  add(app, "--workers", f.workers, "worker threads (default: QF_WORKERS or cores)");
  app->add_flag("-v,--verbose", f.verbose, "progress on stderr");
}

ExperimentConfig merge(Stage stage, const Flags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    require(std::filesystem::exists(f.config), ErrorKind::kIo, "config file not found: " + f.config);
    try {
      j = nlohmann::json::parse(read_file(f.config));
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kConfig, "config file " + f.config + " is not valid JSON: " + e.what());
    }
    if (j.contains("stage")) {
      require(j.at("stage") == std::string(stage_name(stage)), ErrorKind::kConfig,
              "config file is for stage '" + j.at("stage").get<std::string>() + "', not '" +
                  std::string(stage_name(stage)) + "'");
    }
  }
  j["stage"] = std::string(stage_name(stage));
  auto set = [&j](const char* key, const auto& opt) {
    if (opt) j[key] = *opt;
  };
  set("task", f.task);
  set("input_size", f.input_size);
  set("seed", f.seed);
  set("init_seed", f.init_seed);
  set("train", f.train);
  set("eval", f.eval);
  set("model_dim", f.model_dim);
  set("n_layers", f.n_layers);
  set("n_heads", f.n_heads);
  set("batch_size", f.batch_size);
  set("peak_lr", f.peak_lr);
  set("steps", f.steps);
  set("budget", f.budget);
  set("eval_points", f.eval_points);
  set("feature", f.feature);
  set("trials", f.trials);
  set("resamples", f.resamples);
  set("kind", f.kind);
  set("in", f.in);
  set("out", f.out);
  set("workers", f.workers);
  if (f.no_checkpoints) j["checkpoints"] = false;
  if (f.verbose) j["verbose"] = true;
  if (!f.probe_steps.empty()) j["probe_steps"] = f.probe_steps;
  if (f.grid) {
    require(std::filesystem::exists(*f.grid), ErrorKind::kIo, "grid file not found: " + *f.grid);
    j["grid"] = nlohmann::json::parse(read_file(*f.grid));
  }
  if (!f.budget_exponents.empty()) {
    if (!j.contains("grid")) j["grid"] = nlohmann::json::object();
    j["grid"].erase("budgets");
    j["grid"]["budget_exponents"] = f.budget_exponents;
  }
  return experiment_from_json(j);
}

void report_error(std::string_view kind, int code, std::string_view message) {
  std::cerr << "qf: error[" << kind << "]: " << message << '\n';
  std::cerr << nlohmann::json{{"error", kind}, {"exit_code", code}, {"message", message}}.dump() << '\n';
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Quiet-feature experiment pipeline"};
  app.require_subcommand(1);
  Flags flags;
  std::map<CLI::App*, Stage> stages;
  for (auto s : kStages) {
    auto* sub = app.add_subcommand(std::string(stage_name(s)));
    register_flags(sub, flags);
    stages[sub] = s;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", kExitUsage, e.what());
    std::cerr << app.help();
    return kExitUsage;
  }
  try {
    Stage stage = Stage::kTrain;
    for (const auto& [sub, s] : stages) {
      if (sub->parsed()) stage = s;
    }
    if (const char* w = std::getenv("QF_WORKERS"); w && !flags.workers) flags.workers = std::atoi(w);
    const ExperimentConfig cfg = merge(stage, flags);
    run_stage(cfg);
    return kExitOk;
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(error_kind_name(e.kind()), code, e.what());
    return code;
  } catch (const nlohmann::json::exception& e) {
    report_error("parse", kExitParse, e.what());
    return kExitParse;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error("io", kExitIo, e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    report_error("internal", kExitInternal, e.what());
    return kExitInternal;
  }
}

}  // namespace qf
