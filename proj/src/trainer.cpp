#include "qf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>

#include "qf/checkpoint.hpp"
#include "qf/error.hpp"
#include "qf/io.hpp"

namespace qf {

double lr_at(std::int64_t step, const Schedule& s) {
  require(step >= 0 && step <= s.total_steps, ErrorKind::kContract,
          "lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  const double peak = s.peak_lr;
  const std::int64_t warmup = s.warmup_steps();
  if (step < warmup) {
    return peak * (kWarmupStartFactor + (1.0 - kWarmupStartFactor) * static_cast<double>(step) / warmup);
  }
  const double floor = kFinalLrFactor * peak;
  const std::int64_t span = s.total_steps - warmup;
  if (span == 0) return peak;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
OptimizerState<T> make_optimizer(std::size_t size, const AdamWConfig& config) {
  OptimizerState<T> opt;
  opt.config = config;
  opt.m.assign(size, T(0));
  opt.v.assign(size, T(0));
  opt.decay.assign(size, 1);
  return opt;
}

template <typename T>
OptimizerState<T> make_optimizer(const ParamLayout& layout, const AdamWConfig& config) {
  auto opt = make_optimizer<T>(layout.total, config);
  for (const auto& t : layout.tensors) {
    std::fill(opt.decay.begin() + static_cast<std::ptrdiff_t>(t.offset),
              opt.decay.begin() + static_cast<std::ptrdiff_t>(t.offset + t.size()), t.decay ? 1 : 0);
  }
  return opt;
}

template <typename T>
double clip_global_norm(std::span<T> grads, double max_norm) {
  double ss = 0;
  for (T g : grads) ss += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (T& g : grads) g *= scale;
  }
  return norm;
}

template <typename T>
void adamw_step(OptimizerState<T>& opt, std::span<T> params, std::span<const T> grads, double lr) {
  require(params.size() == grads.size() && params.size() == opt.m.size(), ErrorKind::kShape,
          "adamw_step: parameter, gradient and moment sizes differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(static_cast<double>(grads[i]))) {
      fail(ErrorKind::kNumeric, "non-finite gradient at parameter index " + std::to_string(i) + " on optimizer step " +
                                    std::to_string(opt.step + 1));
    }
  }
  const auto& c = opt.config;
  ++opt.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T decay = static_cast<T>(lr * c.weight_decay);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    opt.m[i] = b1 * opt.m[i] + (T(1) - b1) * g;
    opt.v[i] = b2 * opt.v[i] + (T(1) - b2) * g * g;
    if (opt.decay[i]) params[i] -= decay * params[i];
    params[i] -= step_size * opt.m[i] / (std::sqrt(opt.v[i]) * inv_sqrt_bc2 + eps);
  }
}

std::array<std::pair<std::size_t, std::size_t>, 3> third_bounds(std::size_t n) {
  std::array<std::pair<std::size_t, std::size_t>, 3> out{};
  const std::size_t base = n / 3;
  const std::size_t extra = n % 3;
  std::size_t at = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    out[k] = {at, at + len};
    at += len;
  }
  return out;
}

std::array<double, 3> thirds_average(std::span<const double> values) {
  std::array<double, 3> out{};
  const auto bounds = third_bounds(values.size());
  for (std::size_t k = 0; k < 3; ++k) {
    const auto [b, e] = bounds[k];
    if (b == e) {
      out[k] = std::nan("");
      continue;
    }
    double sum = 0;
    for (std::size_t i = b; i < e; ++i) sum += values[i];
    out[k] = sum / static_cast<double>(e - b);
  }
  return out;
}

template <typename T>
EvalReport evaluate(const ModelState<T>& state, std::span<const Example> split, const EvalOptions& options) {
  require(!split.empty(), ErrorKind::kContract, "evaluate: empty split");
  EvalReport rep;
  rep.examples = split.size();
  std::vector<double> pos_sum;
  std::vector<std::size_t> pos_count;
  double total = 0;
  std::size_t tokens = 0;
  std::size_t correct = 0;
  ModelRunner<T> runner;
  ForwardOptions fopts;
  fopts.interventions = options.interventions;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, options.batch_size));
  std::vector<TokenSequence> seqs;
  for (std::size_t begin = 0; begin < split.size(); begin += bs) {
    const std::size_t end = std::min(split.size(), begin + bs);
    seqs.clear();
    for (std::size_t i = begin; i < end; ++i) seqs.push_back(split[i].tokens);
    const Batch batch = make_batch(seqs);
    const auto fwd = runner.forward(state, batch, fopts);
    const int V = fwd.vocab;
    for (int r = 0; r < batch.rows; ++r) {
      const auto& s = seqs[static_cast<std::size_t>(r)];
      bool ok = true;
      double ex_loss = 0;
      for (std::size_t t = s.answer_start; t < s.ids.size(); ++t) {
        const T* z = fwd.logits_at(r, static_cast<int>(t) - 1);
        const int argmax = static_cast<int>(std::max_element(z, z + V) - z);
        if (argmax != s.ids[t]) ok = false;
        const double mx = static_cast<double>(z[argmax]);
        double sum = 0;
        for (int k = 0; k < V; ++k) sum += std::exp(static_cast<double>(z[k]) - mx);
        const double ce = std::log(sum) + mx - static_cast<double>(z[s.ids[t]]);
        const std::size_t j = t - s.answer_start;
        if (pos_sum.size() <= j) {
          pos_sum.resize(j + 1, 0.0);
          pos_count.resize(j + 1, 0);
        }
        pos_sum[j] += ce;
        ++pos_count[j];
        ex_loss += ce;
        total += ce;
        ++tokens;
      }
      correct += ok ? 1 : 0;
      if (options.keep_examples) {
        rep.correct.push_back(ok ? 1 : 0);
        rep.example_losses.push_back(ex_loss / static_cast<double>(s.ids.size() - s.answer_start));
      }
    }
  }
  rep.loss = total / static_cast<double>(tokens);
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  rep.position_losses.resize(pos_sum.size());
  for (std::size_t j = 0; j < pos_sum.size(); ++j) rep.position_losses[j] = pos_sum[j] / static_cast<double>(pos_count[j]);
  rep.thirds = thirds_average(rep.position_losses);
  return rep;
}

template <typename T>
std::vector<int> greedy_decode(const ModelState<T>& state, std::span<const int> prompt, int max_new,
                               std::span<const Intervention> interventions) {
  require(!prompt.empty(), ErrorKind::kContract, "greedy_decode: empty prompt");
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  ModelRunner<T> runner;
  ForwardOptions fopts;
  fopts.interventions = interventions;
  // Assumes the <EOS> symbol is the last vocabulary entry.
  const int eos = state.config.vocab_size - 1;
  for (int k = 0; k < max_new && static_cast<int>(seq.size()) < state.config.max_seq_len; ++k) {
    Batch batch;
    batch.rows = 1;
    batch.cols = static_cast<int>(seq.size());
    batch.tokens = seq;
    batch.loss_mask.assign(seq.size(), 0);
    batch.lengths = {batch.cols};
    const auto fwd = runner.forward(state, batch, fopts);
    const T* z = fwd.logits_at(0, batch.cols - 1);
    const int next = static_cast<int>(std::max_element(z, z + fwd.vocab) - z);
    out.push_back(next);
    seq.push_back(next);
    if (next == eos) break;
  }
  return out;
}

// ----------------------------------------------------------------------------

ModelConfig resolve_model_config(const RunConfig& run) {
  ModelConfig mc = run.model;
  mc.vocab_size = Vocabulary::for_task(run.task, run.input_size).size();
  mc.max_seq_len = max_sequence_length(run.task, run.input_size);
  mc.seed = run.init_seed;
  mc.validate();
  return mc;
}

nlohmann::json run_config_to_json(const RunConfig& r) {
  nlohmann::json j;
  j["task"] = std::string(task_name(r.task));
  j["input_size"] = r.input_size;
  j["model"] = model_config_to_json(resolve_model_config(r));
  j["batch_size"] = r.batch_size;
  j["peak_lr"] = r.peak_lr;
  j["total_steps"] = r.total_steps;
  j["data_seed"] = r.data_seed;
  j["init_seed"] = r.init_seed;
  j["eval_points"] = r.eval_points;
  j["checkpoint_at_evals"] = r.checkpoint_at_evals;
  j["eval_examples"] = r.eval_examples;
  j["budget"] = r.budget;
  j["max_steps"] = r.max_steps;
  j["optimizer"] = {{"beta1", r.optimizer.beta1},
                    {"beta2", r.optimizer.beta2},
                    {"eps", r.optimizer.eps},
                    {"weight_decay", r.optimizer.weight_decay},
                    {"clip_norm", r.optimizer.clip_norm}};
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig r;
  r.task = parse_task(j.at("task").get<std::string>());
  r.input_size = j.at("input_size").get<int>();
  if (j.contains("model")) r.model = model_config_from_json(j.at("model"));
  r.batch_size = j.value("batch_size", r.batch_size);
  r.peak_lr = j.value("peak_lr", r.peak_lr);
  r.total_steps = j.value("total_steps", r.total_steps);
  r.data_seed = j.value("data_seed", r.data_seed);
  r.init_seed = j.value("init_seed", r.init_seed);
  r.eval_points = j.value("eval_points", r.eval_points);
  r.checkpoint_at_evals = j.value("checkpoint_at_evals", r.checkpoint_at_evals);
  r.eval_examples = j.value("eval_examples", r.eval_examples);
  r.budget = j.value("budget", r.budget);
  r.max_steps = j.value("max_steps", r.max_steps);
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    r.optimizer.beta1 = o.value("beta1", r.optimizer.beta1);
    r.optimizer.beta2 = o.value("beta2", r.optimizer.beta2);
    r.optimizer.eps = o.value("eps", r.optimizer.eps);
    r.optimizer.weight_decay = o.value("weight_decay", r.optimizer.weight_decay);
    r.optimizer.clip_norm = o.value("clip_norm", r.optimizer.clip_norm);
  }
  return r;
}

std::string run_config_hash(const RunConfig& run) { return hex64(fnv1a64(run_config_to_json(run).dump())); }

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double number_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

nlohmann::json numbers(std::span<const double> v) {
  auto out = nlohmann::json::array();
  for (double x : v) out.push_back(number_or_null(x));
  return out;
}

std::vector<double> numbers_from(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(number_from(x));
  return out;
}

nlohmann::json eval_to_json(const EvalReport& e) {
  return {{"loss", number_or_null(e.loss)},
          {"accuracy", e.accuracy},
          {"examples", e.examples},
          {"position_losses", numbers(e.position_losses)},
          {"thirds", numbers(e.thirds)}};
}

EvalReport eval_from_json(const nlohmann::json& j) {
  EvalReport e;
  e.loss = number_from(j.at("loss"));
  e.accuracy = j.at("accuracy").get<double>();
  e.examples = j.at("examples").get<std::size_t>();
  e.position_losses = numbers_from(j.at("position_losses"));
  const auto t = numbers_from(j.at("thirds"));
  for (std::size_t k = 0; k < 3 && k < t.size(); ++k) e.thirds[k] = t[k];
  return e;
}

}  // namespace

nlohmann::json snapshot_to_json(const Snapshot& s) {
  return {{"step", s.step},
          {"train_loss", number_or_null(s.train_loss)},
          {"val_loss", number_or_null(s.val_loss)},
          {"val_accuracy", s.val_accuracy},
          {"position_losses", numbers(s.position_losses)},
          {"thirds", numbers(s.thirds)}};
}

nlohmann::json run_record_to_json(const RunRecord& rec) {
  nlohmann::json j;
  j["format"] = "qf-run/1";
  j["config"] = run_config_to_json(rec.config);
  j["config_hash"] = rec.config_hash;
  j["params"] = rec.params;
  j["train_examples"] = rec.train_examples;
  j["snapshots"] = nlohmann::json::array();
  for (const auto& s : rec.snapshots) j["snapshots"].push_back(snapshot_to_json(s));
  j["test"] = eval_to_json(rec.test);
  j["checkpoints"] = nlohmann::json::array();
  for (const auto& [step, file] : rec.checkpoints) j["checkpoints"].push_back({{"step", step}, {"file", file}});
  j["diverged"] = rec.diverged;
  j["divergence"] = rec.divergence;
  j["wall_seconds"] = rec.wall_seconds;
  j["completed"] = rec.completed;
  return j;
}

RunRecord run_record_from_json(const nlohmann::json& j) {
  RunRecord rec;
  rec.config = run_config_from_json(j.at("config"));
  rec.config_hash = j.at("config_hash").get<std::string>();
  rec.params = j.at("params").get<std::int64_t>();
  rec.train_examples = j.at("train_examples").get<std::size_t>();
  for (const auto& s : j.at("snapshots")) {
    Snapshot snap;
    snap.step = s.at("step").get<std::int64_t>();
    snap.train_loss = number_from(s.at("train_loss"));
    snap.val_loss = number_from(s.at("val_loss"));
    snap.val_accuracy = s.at("val_accuracy").get<double>();
    snap.position_losses = numbers_from(s.at("position_losses"));
    const auto t = numbers_from(s.at("thirds"));
    for (std::size_t k = 0; k < 3 && k < t.size(); ++k) snap.thirds[k] = t[k];
    rec.snapshots.push_back(std::move(snap));
  }
  rec.test = eval_from_json(j.at("test"));
  for (const auto& c : j.at("checkpoints")) {
    rec.checkpoints.emplace_back(c.at("step").get<std::int64_t>(), c.at("file").get<std::string>());
  }
  rec.diverged = j.at("diverged").get<bool>();
  rec.divergence = j.value("divergence", "");
  rec.wall_seconds = j.value("wall_seconds", 0.0);
  rec.completed = j.value("completed", false);
  return rec;
}

std::vector<std::int64_t> eval_schedule(std::int64_t total_steps, int points) {
  std::set<std::int64_t> steps{0};
  if (total_steps > 0 && points > 0) {
    const double top = std::log(static_cast<double>(total_steps));
    for (int k = 0; k < points; ++k) {
      const double frac = points == 1 ? 1.0 : static_cast<double>(k) / (points - 1);
      steps.insert(std::clamp<std::int64_t>(std::llround(std::exp(top * frac)), 1, total_steps));
    }
    steps.insert(total_steps);
  }
  return {steps.begin(), steps.end()};
}

DatasetSplit run_dataset(const RunConfig& run) {
  const auto n_train = static_cast<std::size_t>(run.batch_size) * static_cast<std::size_t>(run.total_steps);
  return build_dataset(run.task, run.input_size, n_train, run.data_seed, run.eval_examples);
}

RunRecord train_run(const RunConfig& run, const TrainHooks& hooks) {
  const auto started = std::chrono::steady_clock::now();
  require(run.batch_size > 0, ErrorKind::kConfig, "batch_size must be positive");
  require(run.total_steps >= 0 && run.total_steps <= run.max_steps, ErrorKind::kConfig,
          "total_steps " + std::to_string(run.total_steps) + " outside [0, " + std::to_string(run.max_steps) + "]");
  RunRecord rec;
  rec.config = run;
  rec.config_hash = run_config_hash(run);
  const ModelConfig mc = resolve_model_config(run);
  rec.params = count_params(mc);

  const DatasetSplit ds = run_dataset(run);
  rec.train_examples = ds.train.size();
  auto state = init_model<float>(mc, run.init_seed);
  auto opt = make_optimizer<float>(state.layout, run.optimizer);
  const Schedule schedule{run.peak_lr, run.total_steps};
  const auto evals = eval_schedule(run.total_steps, run.eval_points);

  std::ofstream metrics;
  if (!run.out_dir.empty()) {
    std::filesystem::create_directories(run.out_dir);
    metrics.open(run.out_dir / "metrics.jsonl", std::ios::trunc);
    require(metrics.good(), ErrorKind::kIo, "cannot open metrics log in " + run.out_dir.string());
    if (run.checkpoint_at_evals) std::filesystem::create_directories(run.out_dir / "checkpoints");
  }

  EvalOptions val_opts;
  val_opts.keep_examples = false;
  ModelRunner<float> runner;
  std::vector<TokenSequence> batch_seqs;
  std::size_t next_eval = 0;
  double loss_sum = 0;
  std::int64_t loss_count = 0;
  for (std::int64_t step = 0;; ++step) {
    if (next_eval < evals.size() && evals[next_eval] == step) {
      ++next_eval;
      const auto rep = evaluate(state, std::span<const Example>(ds.validation), val_opts);
      Snapshot snap;
      snap.step = step;
      snap.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : std::nan("");
      snap.val_loss = rep.loss;
      snap.val_accuracy = rep.accuracy;
      snap.position_losses = rep.position_losses;
      snap.thirds = rep.thirds;
      loss_sum = 0;
      loss_count = 0;
      if (metrics.is_open()) {
        auto line = snapshot_to_json(snap);
        line["config_hash"] = rec.config_hash;
        line["stage"] = "train";
        metrics << line.dump() << '\n';
        metrics.flush();
      }
      if (hooks.verbose) {
        std::cerr << "step " << step << " train " << snap.train_loss << " val " << snap.val_loss << " acc "
                  << snap.val_accuracy << '\n';
      }
      if (run.checkpoint_at_evals && !run.out_dir.empty()) {
        char name[48];
        std::snprintf(name, sizeof name, "checkpoints/step_%08lld.qfc", static_cast<long long>(step));
        Checkpoint ckpt{state, static_cast<std::uint64_t>(step), std::to_string(step * run.batch_size), rec.config_hash};
        write_checkpoint(run.out_dir / name, ckpt);
        rec.checkpoints.emplace_back(step, name);
      }
      if (hooks.on_eval) hooks.on_eval(step, state);
      rec.snapshots.push_back(std::move(snap));
    }
    if (step == run.total_steps) break;

    batch_seqs.clear();
    const auto first = static_cast<std::size_t>(step) * static_cast<std::size_t>(run.batch_size);
    for (std::size_t i = 0; i < static_cast<std::size_t>(run.batch_size); ++i) batch_seqs.push_back(ds.train[first + i].tokens);
    const Batch batch = make_batch(batch_seqs);
    auto lg = runner.loss_and_grads(state, batch);
    if (!std::isfinite(static_cast<double>(lg.loss))) {
      rec.diverged = true;
      rec.divergence = "non-finite training loss at step " + std::to_string(step);
      break;
    }
    clip_global_norm(std::span<float>(lg.grads), run.optimizer.clip_norm);
    try {
      adamw_step(opt, std::span<float>(state.params), std::span<const float>(lg.grads), lr_at(step, schedule));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      rec.diverged = true;
      rec.divergence = e.what();
      break;
    }
    loss_sum += lg.loss;
    ++loss_count;
  }
  if (!rec.diverged) {
    rec.test = evaluate(state, std::span<const Example>(ds.test));
    const bool finite = std::all_of(state.params.begin(), state.params.end(), [](float p) { return std::isfinite(p); });
    if (!finite || !std::isfinite(rec.test.loss)) {
      rec.diverged = true;
      rec.divergence = "non-finite parameters after training";
    }
  }
  rec.completed = true;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!run.out_dir.empty()) {
    Checkpoint final_ckpt{state, static_cast<std::uint64_t>(run.total_steps), "", rec.config_hash};
    write_checkpoint(run.out_dir / "final.qfc", final_ckpt);
    atomic_write_file(run.out_dir / "record.json", run_record_to_json(rec).dump(2) + "\n");
  }
  return rec;
}

template OptimizerState<float> make_optimizer<float>(const ParamLayout&, const AdamWConfig&);
template OptimizerState<double> make_optimizer<double>(const ParamLayout&, const AdamWConfig&);
template OptimizerState<float> make_optimizer<float>(std::size_t, const AdamWConfig&);
template OptimizerState<double> make_optimizer<double>(std::size_t, const AdamWConfig&);
template double clip_global_norm<float>(std::span<float>, double);
template double clip_global_norm<double>(std::span<double>, double);
template void adamw_step<float>(OptimizerState<float>&, std::span<float>, std::span<const float>, double);
template void adamw_step<double>(OptimizerState<double>&, std::span<double>, std::span<const double>, double);
template EvalReport evaluate<float>(const ModelState<float>&, std::span<const Example>, const EvalOptions&);
template EvalReport evaluate<double>(const ModelState<double>&, std::span<const Example>, const EvalOptions&);
template std::vector<int> greedy_decode<float>(const ModelState<float>&, std::span<const int>, int,
                                               std::span<const Intervention>);
template std::vector<int> greedy_decode<double>(const ModelState<double>&, std::span<const int>, int,
                                                std::span<const Intervention>);

}  // namespace qf
