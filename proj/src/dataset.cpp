#include "qf/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "qf/error.hpp"
#include "qf/features.hpp"
#include "qf/graph_canon.hpp"
#include "qf/io.hpp"
#include "qf/random.hpp"

namespace qf {

namespace {

constexpr std::uint64_t kEvalStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kHoldoutStreamBase = 16;

SmallGraph graph_of(const TaskInstance& inst) {
  const auto& g = std::get<GraphPayload>(inst.payload);
  SmallGraph out(g.num_vertices);
  for (const auto& e : g.edges) out.add_edge(e.u, e.v);
  return out;
}

long double binomial(int n, int k) {
  long double r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Keys already claimed by some split.
class UsedKeys {
 public:
  UsedKeys(TaskId task, const Vocabulary& vocab) : task_(task), vocab_(vocab) {}

  enum class Verdict { kAccept, kDuplicate, kSwapLeak, kIsomorphic };

  Verdict check(const Example& ex, bool guard_swaps) const {
    if (exact_.count(example_key(ex.tokens))) return Verdict::kDuplicate;
    if (guard_swaps && is_binary_pair_task(task_) && swapped_.count(swapped_key(ex))) return Verdict::kSwapLeak;
    if (is_graph_task(task_) && classes_.count(canonical_form(graph_of(ex.instance)))) return Verdict::kIsomorphic;
    return Verdict::kAccept;
  }

  // `protect_swaps`: forbid later train examples whose swap equals this one.
  void claim(const Example& ex, bool protect_swaps) {
    exact_.insert(example_key(ex.tokens));
    if (protect_swaps && is_binary_pair_task(task_)) swapped_.insert(example_key(ex.tokens));
    if (is_graph_task(task_)) classes_.insert(canonical_form(graph_of(ex.instance)));
  }

 private:
  std::string swapped_key(const Example& ex) const {
    TaskInstance swapped = ex.instance;
    auto& p = std::get<BinaryOperands>(swapped.payload);
    std::swap(p.x, p.y);
    swapped.target = solve(swapped);
    return example_key(serialize(swapped, vocab_));
  }

  TaskId task_;
  const Vocabulary& vocab_;
  std::unordered_set<std::string> exact_;
  std::unordered_set<std::string> swapped_;
  std::unordered_set<std::uint64_t> classes_;
};

Example draw(TaskId task, int n, const Vocabulary& vocab, std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  Example ex;
  ex.instance = sample_instance(task, n, derive_seed(seed, stream, counter));
  ex.tokens = serialize(ex.instance, vocab);
  return ex;
}

[[noreturn]] void exhausted(TaskId task, int n, std::size_t wanted, const char* what) {
  std::ostringstream msg;
  msg << "instance space exhausted for " << task_name(task) << " (n=" << n << ") while drawing " << wanted << ' ' << what
      << " examples (space ~" << static_cast<double>(instance_space_size(task, n)) << "); use a larger input_size";
  fail(ErrorKind::kGeneration, msg.str());
}

std::vector<Example> fill(TaskId task, int n, const Vocabulary& vocab, std::uint64_t seed, std::uint64_t stream,
                          std::size_t count, UsedKeys& used, bool guard_swaps, bool protect_swaps, DedupReport& report,
                          const char* what) {
  std::vector<Example> out;
  out.reserve(count);
  const std::uint64_t max_draws = 64 * static_cast<std::uint64_t>(count) + 100000;
  for (std::uint64_t counter = 0; out.size() < count; ++counter) {
    if (counter >= max_draws) exhausted(task, n, count, what);
    auto ex = draw(task, n, vocab, seed, stream, counter);
    ++report.candidates_drawn;
    switch (used.check(ex, guard_swaps)) {
      case UsedKeys::Verdict::kAccept:
        used.claim(ex, protect_swaps);
        out.push_back(std::move(ex));
        break;
      case UsedKeys::Verdict::kDuplicate: ++report.exact_duplicates; break;
      case UsedKeys::Verdict::kSwapLeak: ++report.swap_leaks; break;
      case UsedKeys::Verdict::kIsomorphic: ++report.isomorphic_duplicates; break;
    }
  }
  return out;
}

}  // namespace

std::string example_key(const TokenSequence& tokens) {
  std::string key;
  key.reserve(tokens.ids.size());
  for (int id : tokens.ids) key.push_back(static_cast<char>(id));
  return key;
}

long double instance_space_size(TaskId task, int n) {
  check_input_size(task, n);
  switch (task) {
    case TaskId::kAddition:
    case TaskId::kMultiplication: return std::pow(4.0L, n);
    case TaskId::kMajorityOfMajorities: {
      const int group = n / 4;
      const long double tie = (group % 2 == 0) ? binomial(group, group / 2) : 0.0L;
      const long double majority_one = (std::pow(2.0L, group) - tie) / 2;
      // Final vote must not be 2-2: patterns with 0, 1, 3 or 4 one-groups.
      return 10.0L * std::pow(majority_one, 4);
    }
    case TaskId::kBfs:
    case TaskId::kDfs:
    case TaskId::kShortestPath:
    case TaskId::kTopologicalSort:
    case TaskId::kMst: return static_cast<long double>(connected_class_count(n));
    case TaskId::kMaxSubarray: return std::pow(19.0L, n);
    case TaskId::kActivitySelection: return std::pow(210.0L, n);
  }
  return 0;
}

DatasetSplit build_dataset(TaskId task, int n, std::size_t n_train, std::uint64_t seed, std::size_t n_eval) {
  check_input_size(task, n);
  const long double needed = static_cast<long double>(n_train) + 2.0L * static_cast<long double>(n_eval);
  if (needed > instance_space_size(task, n)) exhausted(task, n, static_cast<std::size_t>(needed), "total");
  DatasetSplit ds;
  ds.task = task;
  ds.input_size = n;
  ds.seed = seed;
  ds.vocab = Vocabulary::for_task(task, n);
  UsedKeys used(task, ds.vocab);
  auto eval = fill(task, n, ds.vocab, seed, kEvalStream, 2 * n_eval, used, false, true, ds.report, "evaluation");
  ds.validation.assign(std::make_move_iterator(eval.begin()), std::make_move_iterator(eval.begin() + static_cast<std::ptrdiff_t>(n_eval)));
  ds.test.assign(std::make_move_iterator(eval.begin() + static_cast<std::ptrdiff_t>(n_eval)), std::make_move_iterator(eval.end()));
  ds.train = fill(task, n, ds.vocab, seed, kTrainStream, n_train, used, true, false, ds.report, "training");
  return ds;
}

std::vector<Example> build_holdout(const DatasetSplit& ds, std::size_t count, std::uint64_t stream) {
  UsedKeys used(ds.task, ds.vocab);
  for (const auto* split : {&ds.train, &ds.validation, &ds.test}) {
    for (const auto& ex : *split) used.claim(ex, false);
  }
  DedupReport report;
  return fill(ds.task, ds.input_size, ds.vocab, ds.seed, kHoldoutStreamBase + stream, count, used, false, false, report,
              "holdout");
}

// ----------------------------------------------------------------------------
// Files

namespace {

using nlohmann::json;

constexpr const char* kSplitNames[] = {"train", "validation", "test"};

json header_json(const DatasetSplit& ds, const std::string& config_hash) {
  json h;
  h["format"] = "qf-dataset/1";
  h["task"] = std::string(task_name(ds.task));
  h["input_size"] = ds.input_size;
  h["seed"] = ds.seed;
  h["vocabulary"] = ds.vocab.symbols();
  h["splits"] = {{"train", ds.train.size()}, {"validation", ds.validation.size()}, {"test", ds.test.size()}};
  h["dedup"] = {{"candidates_drawn", ds.report.candidates_drawn},
                {"exact_duplicates", ds.report.exact_duplicates},
                {"swap_leaks", ds.report.swap_leaks},
                {"isomorphic_duplicates", ds.report.isomorphic_duplicates}};
  if (!config_hash.empty()) h["config_hash"] = config_hash;
  return h;
}

std::string format_value(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

}  // namespace

void write_dataset(const DatasetSplit& ds, const std::filesystem::path& dir, const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  const json header = header_json(ds, config_hash);
  const bool has_features = !features_for_task(ds.task).empty();
  const std::vector<const std::vector<Example>*> splits = {&ds.train, &ds.validation, &ds.test};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    std::string text = "# " + header.dump() + "\n";
    for (const auto& ex : *splits[s]) {
      text += render_symbols(ex.tokens, ds.vocab);
      text += '\n';
    }
    atomic_write_file(dir / (std::string(kSplitNames[s]) + ".txt"), text);
    if (!has_features) continue;
    std::string side = "# " + header.dump() + "\nexample\tfeature\tslot\tposition\tvalue\n";
    for (std::size_t i = 0; i < splits[s]->size(); ++i) {
      const auto ann = extract_features((*splits[s])[i].instance);
      for (const auto& track : ann.tracks) {
        for (const auto& p : track.points) {
          side += std::to_string(i) + '\t' + std::string(feature_name(track.feature)) + '\t' + std::to_string(p.slot) +
                  '\t' + std::to_string(p.position) + '\t';
          for (std::size_t k = 0; k < p.value.size(); ++k) {
            if (k) side += ',';
            side += format_value(p.value[k]);
          }
          side += '\n';
        }
      }
    }
    atomic_write_file(dir / (std::string(kSplitNames[s]) + ".features.tsv"), side);
  }
  // Written last: a directory without a manifest is an incomplete store.
  json manifest = header;
  manifest["files"] = json::array();
  for (auto name : kSplitNames) {
    manifest["files"].push_back(std::string(name) + ".txt");
    if (has_features) manifest["files"].push_back(std::string(name) + ".features.tsv");
  }
  atomic_write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DatasetSplit read_dataset(const std::filesystem::path& dir) {
  require(std::filesystem::exists(dir / "manifest.json"), ErrorKind::kIo,
          "no dataset manifest in " + dir.string() + " (missing or incomplete store)");
  const json manifest = json::parse(read_file(dir / "manifest.json"));
  DatasetSplit ds;
  ds.task = parse_task(manifest.at("task").get<std::string>());
  ds.input_size = manifest.at("input_size").get<int>();
  ds.seed = manifest.at("seed").get<std::uint64_t>();
  ds.vocab = Vocabulary::for_task(ds.task, ds.input_size);
  require(manifest.at("vocabulary").get<std::vector<std::string>>() == ds.vocab.symbols(), ErrorKind::kIo,
          "dataset vocabulary does not match this build's vocabulary");
  std::vector<Example>* splits[] = {&ds.train, &ds.validation, &ds.test};
  for (std::size_t s = 0; s < 3; ++s) {
    std::istringstream in(read_file(dir / (std::string(kSplitNames[s]) + ".txt")));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      Example ex;
      ex.tokens = tokens_from_text(line, ds.vocab);
      ex.instance = parse(ex.tokens, ds.vocab);
      splits[s]->push_back(std::move(ex));
    }
    require(splits[s]->size() == manifest.at("splits").at(kSplitNames[s]).get<std::size_t>(), ErrorKind::kIo,
            std::string("split size mismatch for ") + kSplitNames[s]);
  }
  const auto& d = manifest.at("dedup");
  ds.report = {d.at("candidates_drawn"), d.at("exact_duplicates"), d.at("swap_leaks"), d.at("isomorphic_duplicates")};
  return ds;
}

}  // namespace qf
