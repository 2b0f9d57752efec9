#include "qf/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "qf/error.hpp"
#include "qf/io.hpp"

namespace qf {

std::string_view plot_kind_name(PlotKind kind) {
  switch (kind) {
    case PlotKind::kFrontier: return "frontier";
    case PlotKind::kSingleRun: return "single-run";
    case PlotKind::kProbeThirds: return "probe-thirds";
    case PlotKind::kDatasetSize: return "dataset-size";
  }
  return "?";
}

PlotKind parse_plot_kind(std::string_view name) {
  for (auto k : {PlotKind::kFrontier, PlotKind::kSingleRun, PlotKind::kProbeThirds, PlotKind::kDatasetSize}) {
    if (plot_kind_name(k) == name) return k;
  }
  fail(ErrorKind::kConfig, "unknown report kind '" + std::string(name) +
                               "' (expected frontier, single-run, probe-thirds or dataset-size)");
}

double chance_loss(TaskId task, int input_size) {
  if (is_binary_pair_task(task) || task == TaskId::kMajorityOfMajorities) return std::log(2.0);
  return std::log(static_cast<double>(Vocabulary::for_task(task, input_size).size()));
}

std::string format_number(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// ----------------------------------------------------------------------------

namespace {

constexpr double kWidth = 760, kHeight = 500;
constexpr double kLeft = 80, kRight = 190, kTop = 50, kBottom = 60;
constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b",
                                    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Axis {
  bool log = false;
  double lo = 0, hi = 1;
  double p0 = 0, p1 = 1;  // pixel range

  double map(double v) const {
    const double a = log ? std::log10(v) : v;
    return p0 + (a - lo) / (hi - lo) * (p1 - p0);
  }
  bool valid(double v) const { return std::isfinite(v) && (!log || v > 0); }
};

Axis make_axis(std::vector<double> values, bool log, double p0, double p1) {
  Axis a;
  a.log = log;
  a.p0 = p0;
  a.p1 = p1;
  std::vector<double> t;
  for (double v : values) {
    if (a.valid(v)) t.push_back(log ? std::log10(v) : v);
  }
  if (t.empty()) {
    a.lo = 0;
    a.hi = 1;
    return a;
  }
  const auto [mn, mx] = std::minmax_element(t.begin(), t.end());
  double lo = *mn, hi = *mx;
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  a.lo = lo - pad;
  a.hi = hi + pad;
  return a;
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> out;
  if (a.log) {
    for (double e = std::ceil(a.lo); e <= a.hi; e += 1) out.push_back(std::pow(10.0, e));
    if (out.size() < 2) {
      for (double e = std::ceil(a.lo * 2) / 2; e <= a.hi; e += 0.5) {
        const double v = std::pow(10.0, e);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
      }
      std::sort(out.begin(), out.end());
    }
    return out;
  }
  const double span = a.hi - a.lo;
  const double raw = span / 5;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  for (double v = std::ceil(a.lo / step) * step; v <= a.hi + 1e-12; v += step) out.push_back(std::abs(v) < 1e-12 ? 0 : v);
  return out;
}

const char* dash(LineStyle s) {
  switch (s) {
    case LineStyle::kDashed: return " stroke-dasharray=\"8 4\"";
    case LineStyle::kDotted: return " stroke-dasharray=\"2 4\"";
    default: return "";
  }
}

}  // namespace

std::string render_svg(const PlotSpec& plot) {
  std::vector<double> xs, ys;
  for (const auto& s : plot.series) {
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  for (const auto& v : plot.verticals) xs.push_back(v.value);
  for (const auto& h : plot.horizontals) ys.push_back(h.value);
  const Axis ax = make_axis(xs, plot.log_x, kLeft, kWidth - kRight);
  const Axis ay = make_axis(ys, plot.log_y, kHeight - kBottom, kTop);

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<!-- provenance: " << escape(plot.provenance) << " kind: " << plot_kind_name(plot.kind) << " -->\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << fmt(kLeft) << "\" y=\"28\" font-size=\"15\">" << escape(plot.title) << "</text>\n";
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  o << "<rect x=\"" << fmt(x0) << "\" y=\"" << fmt(y1) << "\" width=\"" << fmt(x1 - x0) << "\" height=\"" << fmt(y0 - y1)
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t : ticks(ax)) {
    const double px = ax.map(t);
    o << "<line x1=\"" << fmt(px) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(px) << "\" y2=\"" << fmt(y0 + 5)
      << "\" stroke=\"black\"/><text x=\"" << fmt(px) << "\" y=\"" << fmt(y0 + 18) << "\" text-anchor=\"middle\">"
      << format_number(t) << "</text>\n";
  }
  for (double t : ticks(ay)) {
    const double py = ay.map(t);
    o << "<line x1=\"" << fmt(x0 - 5) << "\" y1=\"" << fmt(py) << "\" x2=\"" << fmt(x0) << "\" y2=\"" << fmt(py)
      << "\" stroke=\"black\"/><text x=\"" << fmt(x0 - 8) << "\" y=\"" << fmt(py + 4) << "\" text-anchor=\"end\">"
      << format_number(t) << "</text>\n";
  }
  o << "<text x=\"" << fmt((x0 + x1) / 2) << "\" y=\"" << fmt(kHeight - 18) << "\" text-anchor=\"middle\">"
    << escape(plot.x_label) << "</text>\n";
  o << "<text x=\"18\" y=\"" << fmt((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
    << fmt((y0 + y1) / 2) << ")\">" << escape(plot.y_label) << "</text>\n";

  for (const auto& h : plot.horizontals) {
    if (!ay.valid(h.value)) continue;
    const double py = ay.map(h.value);
    o << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(py) << "\" x2=\"" << fmt(x1) << "\" y2=\"" << fmt(py)
      << "\" stroke=\"red\" stroke-dasharray=\"2 4\"/><text x=\"" << fmt(x1 - 4) << "\" y=\"" << fmt(py - 4)
      << "\" text-anchor=\"end\" fill=\"red\">" << escape(h.label) << "</text>\n";
  }
  for (const auto& v : plot.verticals) {
    if (!ax.valid(v.value)) continue;
    const double px = ax.map(v.value);
    o << "<line x1=\"" << fmt(px) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(px) << "\" y2=\"" << fmt(y1)
      << "\" stroke=\"red\"/><text x=\"" << fmt(px + 4) << "\" y=\"" << fmt(y1 + 14) << "\" fill=\"red\">"
      << escape(v.label) << "</text>\n";
  }

  std::size_t colour = 0;
  double legend_y = kTop + 10;
  for (const auto& s : plot.series) {
    const char* c = kPalette[colour++ % std::size(kPalette)];
    // Polyline segments broken at missing values.
    std::vector<std::vector<std::pair<double, double>>> runs(1);
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (ax.valid(s.x[i]) && ay.valid(s.y[i])) {
        runs.back().emplace_back(ax.map(s.x[i]), ay.map(s.y[i]));
      } else if (!runs.back().empty()) {
        runs.emplace_back();
      }
    }
    for (const auto& r : runs) {
      if (r.size() >= 2) {
        o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\"" << dash(s.style) << " points=\"";
        for (std::size_t i = 0; i < r.size(); ++i) o << (i ? " " : "") << fmt(r[i].first) << ',' << fmt(r[i].second);
        o << "\"/>\n";
      }
      if (s.markers || r.size() == 1) {
        for (const auto& [px, py] : r) o << "<circle cx=\"" << fmt(px) << "\" cy=\"" << fmt(py) << "\" r=\"2.5\" fill=\"" << c << "\"/>\n";
      }
    }
    o << "<line x1=\"" << fmt(x1 + 12) << "\" y1=\"" << fmt(legend_y) << "\" x2=\"" << fmt(x1 + 36) << "\" y2=\""
      << fmt(legend_y) << "\" stroke=\"" << c << "\" stroke-width=\"1.5\"" << dash(s.style) << "/><text x=\""
      << fmt(x1 + 42) << "\" y=\"" << fmt(legend_y + 4) << "\">" << escape(s.label) << "</text>\n";
    legend_y += 18;
  }
  o << "</svg>\n";
  return o.str();
}

std::string render_tsv(const Table& table) {
  std::ostringstream o;
  o << "# provenance\t" << table.provenance << '\n';
  for (std::size_t i = 0; i < table.columns.size(); ++i) o << (i ? "\t" : "") << table.columns[i];
  o << '\n';
  for (const auto& row : table.rows) {
    require(row.size() == table.columns.size(), ErrorKind::kContract, "table row width differs from header");
    for (std::size_t i = 0; i < row.size(); ++i) o << (i ? "\t" : "") << row[i];
    o << '\n';
  }
  return o.str();
}

// ----------------------------------------------------------------------------

namespace {

std::string task_label(TaskId task, int n) { return std::string(task_name(task)) + "-" + std::to_string(n); }

std::string threshold_label(double x) { return "success threshold " + format_number(x); }

}  // namespace

ReportBundle frontier_report(const FrontierReport& f) {
  ReportBundle b;
  b.plot.kind = PlotKind::kFrontier;
  b.plot.title = task_label(f.task, f.input_size) + ": loss vs compute";
  b.plot.x_label = "FLOPs";
  b.plot.y_label = "validation loss (nats)";
  b.plot.provenance = f.grid_hash;
  b.table.provenance = f.grid_hash;
  b.table.columns = {"budget", "val_loss", "isotonic_loss", "test_accuracy", "test_loss", "dataset_size",
                     "model_dim",  "n_layers", "batch_size",    "peak_lr",       "steps",     "runs", "diverged", "best_hash"};
  Series frontier{"compute frontier", {}, {}, LineStyle::kSolid, true};
  Series iso{"isotonic frontier", {}, {}, LineStyle::kDashed, false};
  std::size_t k = 0;
  for (const auto& p : f.points) {
    frontier.x.push_back(p.budget);
    frontier.y.push_back(p.val_loss);
    iso.x.push_back(p.budget);
    double iso_v = std::nan("");
    if (p.usable) {
      if (k < f.isotonic_losses.size()) iso_v = f.isotonic_losses[k];
      ++k;
    } else {
      b.gaps.push_back("budget " + format_number(p.budget) + ": no usable run (" + std::to_string(p.diverged) + " of " +
                       std::to_string(p.runs) + " diverged)");
    }
    iso.y.push_back(iso_v);
    std::vector<std::string> row{format_number(p.budget), format_number(p.val_loss), format_number(iso_v),
                                 format_number(p.test_accuracy), format_number(p.test_loss), std::to_string(p.dataset_size)};
    if (p.usable) {
      row.insert(row.end(), {std::to_string(p.best.model.model_dim), std::to_string(p.best.model.n_layers),
                             std::to_string(p.best.batch_size), format_number(p.best.peak_lr),
                             std::to_string(p.best.total_steps)});
    } else {
      row.insert(row.end(), 5, "-");
    }
    row.insert(row.end(), {std::to_string(p.runs), std::to_string(p.diverged), p.best_hash.empty() ? "-" : p.best_hash});
    b.table.rows.push_back(std::move(row));
  }
  b.plot.series.push_back(std::move(frontier));
  b.plot.series.push_back(std::move(iso));
  for (const auto& s : f.fixed_size) {
    b.plot.series.push_back({s.label, s.budgets, s.val_losses, LineStyle::kDotted, true});
  }
  if (f.transition.found) b.plot.verticals.push_back({f.transition.x, threshold_label(f.transition.x)});
  b.plot.horizontals.push_back({chance_loss(f.task, f.input_size), "random chance"});
  return b;
}

ReportBundle dataset_size_report(const FrontierReport& f) {
  ReportBundle b;
  b.plot.kind = PlotKind::kDatasetSize;
  b.plot.title = task_label(f.task, f.input_size) + ": frontier loss vs training examples";
  b.plot.x_label = "training examples";
  b.plot.y_label = "validation loss (nats)";
  b.plot.provenance = f.grid_hash;
  b.table.provenance = f.grid_hash;
  b.table.columns = {"budget", "dataset_size", "val_loss", "test_accuracy"};
  Series s{"compute-optimal runs", {}, {}, LineStyle::kSolid, true};
  for (const auto& p : f.points) {
    b.table.rows.push_back({format_number(p.budget), std::to_string(p.dataset_size), format_number(p.val_loss),
                            format_number(p.test_accuracy)});
    if (!p.usable) {
      b.gaps.push_back("budget " + format_number(p.budget) + ": no usable run");
      continue;
    }
    s.x.push_back(static_cast<double>(p.dataset_size));
    s.y.push_back(p.val_loss);
  }
  b.plot.series.push_back(std::move(s));
  if (f.transition.found) {
    for (const auto& p : f.points) {
      if (p.budget == f.transition.x) {
        b.plot.verticals.push_back({static_cast<double>(p.dataset_size), "success threshold"});
      }
    }
  }
  b.plot.horizontals.push_back({chance_loss(f.task, f.input_size), "random chance"});
  return b;
}

ReportBundle single_run_report(const RunRecord& r) {
  ReportBundle b;
  b.plot.kind = PlotKind::kSingleRun;
  b.plot.title = task_label(r.config.task, r.config.input_size) + ": d" + std::to_string(r.config.model.model_dim) + " L" +
                 std::to_string(r.config.model.n_layers) + " lr " + format_number(r.config.peak_lr);
  b.plot.x_label = "step";
  b.plot.y_label = "loss (nats)";
  b.plot.provenance = r.config_hash;
  b.table.provenance = r.config_hash;
  b.table.columns = {"step", "train_loss", "val_loss", "val_accuracy", "beginning", "middle", "end"};
  Series train{"train loss", {}, {}, LineStyle::kDashed, false};
  Series val{"validation loss", {}, {}, LineStyle::kSolid, true};
  for (const auto& s : r.snapshots) {
    b.table.rows.push_back({std::to_string(s.step), format_number(s.train_loss), format_number(s.val_loss),
                            format_number(s.val_accuracy), format_number(s.thirds[0]), format_number(s.thirds[1]),
                            format_number(s.thirds[2])});
    if (s.step <= 0) continue;  // log axis
    train.x.push_back(static_cast<double>(s.step));
    train.y.push_back(s.train_loss);
    val.x.push_back(static_cast<double>(s.step));
    val.y.push_back(s.val_loss);
  }
  b.plot.series.push_back(std::move(train));
  b.plot.series.push_back(std::move(val));
  const auto t = detect_transition(r);
  if (t.found) b.plot.verticals.push_back({t.x, threshold_label(t.x)});
  if (!r.completed) b.gaps.push_back("run incomplete" + (r.divergence.empty() ? std::string() : ": " + r.divergence));
  b.plot.horizontals.push_back({chance_loss(r.config.task, r.config.input_size), "random chance"});
  return b;
}

ReportBundle probe_thirds_report(const ProbeCurve& c, const std::string& provenance) {
  static constexpr const char* kThirds[] = {"Beginning", "Middle", "End"};
  ReportBundle b;
  b.plot.kind = PlotKind::kProbeThirds;
  b.plot.title = task_label(c.task, c.input_size) + ": " + std::string(feature_name(c.feature)) + " probe loss";
  b.plot.x_label = "step";
  b.plot.y_label = "probe test loss";
  b.plot.log_y = false;
  b.plot.provenance = provenance;
  b.table.provenance = provenance;
  b.table.columns = {"step", "x", "val_loss", "beginning", "middle", "end"};
  std::array<Series, 3> series;
  for (int k = 0; k < 3; ++k) series[k] = {kThirds[k], {}, {}, LineStyle::kSolid, true};
  bool any_zero = false;
  for (const auto& p : c.points) any_zero = any_zero || p.x <= 0;
  b.plot.log_x = !any_zero;
  for (const auto& p : c.points) {
    b.table.rows.push_back({std::to_string(p.step), format_number(p.x), format_number(p.val_loss),
                            format_number(p.thirds[0]), format_number(p.thirds[1]), format_number(p.thirds[2])});
    for (int k = 0; k < 3; ++k) {
      series[k].x.push_back(p.x);
      series[k].y.push_back(p.thirds[k]);
    }
  }
  b.table.rows.push_back({"baseline", "-", format_number(c.baseline.val_loss), format_number(c.baseline.thirds[0]),
                          format_number(c.baseline.thirds[1]), format_number(c.baseline.thirds[2])});
  for (auto& s : series) b.plot.series.push_back(std::move(s));
  double xmin = INFINITY, xmax = -INFINITY;
  for (const auto& p : c.points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
  }
  if (xmin <= xmax) {
    for (int k = 0; k < 3; ++k) {
      b.plot.series.push_back({std::string(kThirds[k]) + " (random init)", {xmin, xmax},
                               {c.baseline.thirds[k], c.baseline.thirds[k]}, LineStyle::kDotted, false});
    }
  }
  b.gaps = c.gaps;
  return b;
}

void write_report(const ReportBundle& bundle, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  atomic_write_file(dir / (stem + ".tsv"), render_tsv(bundle.table));
  atomic_write_file(dir / (stem + ".svg"), render_svg(bundle.plot));
  const auto gaps = dir / (stem + ".gaps.txt");
  if (!bundle.gaps.empty()) {
    std::string text = "# provenance\t" + bundle.table.provenance + "\n";
    for (const auto& g : bundle.gaps) text += g + "\n";
    atomic_write_file(gaps, text);
  } else {
    std::filesystem::remove(gaps);
  }
}

// ----------------------------------------------------------------------------

std::vector<Snapshot> replay_metrics_log(const std::filesystem::path& path, std::string* config_hash) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot read metrics log " + path.string());
  std::map<std::int64_t, Snapshot> by_step;
  std::string hash;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, path.string() + ": " + e.what());
    }
    const auto h = j.value("config_hash", "");
    if (hash.empty()) {
      hash = h;
    } else {
      require(h == hash, ErrorKind::kData,
              "metrics log " + path.string() + " mixes config hashes " + hash + " and " + h);
    }
    Snapshot s;
    s.step = j.at("step").get<std::int64_t>();
    s.train_loss = j.at("train_loss").is_null() ? std::nan("") : j.at("train_loss").get<double>();
    s.val_loss = j.at("val_loss").is_null() ? std::nan("") : j.at("val_loss").get<double>();
    s.val_accuracy = j.at("val_accuracy").get<double>();
    for (const auto& v : j.at("position_losses")) s.position_losses.push_back(v.is_null() ? std::nan("") : v.get<double>());
    const auto& t = j.at("thirds");
    for (std::size_t k = 0; k < 3 && k < t.size(); ++k) s.thirds[k] = t[k].is_null() ? std::nan("") : t[k].get<double>();
    by_step[s.step] = std::move(s);
  }
  if (config_hash) *config_hash = hash;
  std::vector<Snapshot> out;
  for (auto& [step, s] : by_step) out.push_back(std::move(s));
  return out;
}

namespace {

std::vector<RunRecord> load_sweep_records(const std::filesystem::path& runs_dir) {
  require(std::filesystem::is_directory(runs_dir), ErrorKind::kIo, "missing runs directory " + runs_dir.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(runs_dir)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunRecord> out;
  for (const auto& d : dirs) {
    if (!std::filesystem::exists(d / "record.json")) continue;
    auto r = run_record_from_json(nlohmann::json::parse(read_file(d / "record.json")));
    require(r.config_hash == d.filename().string(), ErrorKind::kData,
            "run directory " + d.string() + " holds a record with config hash " + r.config_hash);
    if (std::filesystem::exists(d / "metrics.jsonl")) {
      std::string hash;
      r.snapshots = replay_metrics_log(d / "metrics.jsonl", &hash);
      require(hash.empty() || hash == r.config_hash, ErrorKind::kData, "metrics log in " + d.string() + " has hash " + hash);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<std::filesystem::path> emit_report(PlotKind kind, const std::filesystem::path& in,
                                               const std::filesystem::path& out) {
  const std::string stem(plot_kind_name(kind));
  switch (kind) {
    case PlotKind::kFrontier:
    case PlotKind::kDatasetSize: {
      require(std::filesystem::exists(in / "grid.json"), ErrorKind::kIo, "missing " + (in / "grid.json").string());
      const auto manifest = nlohmann::json::parse(read_file(in / "grid.json"));
      const BudgetGrid grid = budget_grid_from_json(manifest);
      const auto records = load_sweep_records(in / "runs");
      require(!records.empty(), ErrorKind::kIo, "no run records under " + (in / "runs").string());
      const RunConfig& first = records.front().config;
      for (const auto& r : records) {
        const bool same = r.config.task == first.task && r.config.input_size == first.input_size &&
                          r.config.data_seed == first.data_seed;
        require(same, ErrorKind::kData,
                "refusing mixed provenance: " + r.config_hash + " differs in task, size or data seed from " +
                    records.front().config_hash);
        require(std::find(grid.budgets.begin(), grid.budgets.end(), r.config.budget) != grid.budgets.end(),
                ErrorKind::kData, "refusing mixed provenance: run " + r.config_hash + " has a budget outside the grid");
      }
      const auto frontier = build_frontier(first.task, first.input_size, grid, records, first.data_seed);
      const auto bundle = kind == PlotKind::kFrontier ? frontier_report(frontier) : dataset_size_report(frontier);
      write_report(bundle, out, stem);
      break;
    }
    case PlotKind::kSingleRun: {
      require(std::filesystem::exists(in / "record.json"), ErrorKind::kIo, "missing " + (in / "record.json").string());
      auto r = run_record_from_json(nlohmann::json::parse(read_file(in / "record.json")));
      if (std::filesystem::exists(in / "metrics.jsonl")) {
        std::string hash;
        r.snapshots = replay_metrics_log(in / "metrics.jsonl", &hash);
        require(hash == r.config_hash, ErrorKind::kData,
                "refusing mixed provenance: metrics log hash " + hash + " vs record " + r.config_hash);
      }
      write_report(single_run_report(r), out, stem);
      break;
    }
    case PlotKind::kProbeThirds: {
      const auto path = in / "probe_curve.json";
      require(std::filesystem::exists(path), ErrorKind::kIo, "missing " + path.string());
      const auto j = nlohmann::json::parse(read_file(path));
      write_report(probe_thirds_report(probe_curve_from_json(j), j.value("config_hash", "")), out, stem);
      break;
    }
  }
  std::vector<std::filesystem::path> files{out / (stem + ".tsv"), out / (stem + ".svg")};
  if (std::filesystem::exists(out / (stem + ".gaps.txt"))) files.push_back(out / (stem + ".gaps.txt"));
  return files;
}

}  // namespace qf
