#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qf/probes.hpp"
#include "qf/sweep.hpp"
#include "qf/trainer.hpp"

namespace qf {

enum class PlotKind : std::uint8_t { kFrontier, kSingleRun, kProbeThirds, kDatasetSize };

std::string_view plot_kind_name(PlotKind kind);
PlotKind parse_plot_kind(std::string_view name);

enum class LineStyle : std::uint8_t { kSolid, kDashed, kDotted };

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;  // non-finite values are drawn as breaks
  LineStyle style = LineStyle::kSolid;
  bool markers = true;
};

struct RefLine {
  double value = 0;
  std::string label;
};

struct PlotSpec {
  PlotKind kind = PlotKind::kFrontier;
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_x = true;
  bool log_y = true;
  std::vector<Series> series;
  std::vector<RefLine> verticals;    // success thresholds (red)
  std::vector<RefLine> horizontals;  // random-chance lines (red, dotted)
  std::string provenance;            // config hash
};

// Chance-level loss per answer token: ln 2 for binary answers, ln|V| otherwise.
double chance_loss(TaskId task, int input_size);

// Self-contained SVG; deterministic for identical input.
std::string render_svg(const PlotSpec& plot);

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string provenance;
};
// Tab-separated with a leading "# provenance" comment line.
std::string render_tsv(const Table& table);

std::string format_number(double v);

struct ReportBundle {
  PlotSpec plot;
  Table table;
  std::vector<std::string> gaps;
};

ReportBundle frontier_report(const FrontierReport& frontier);
ReportBundle dataset_size_report(const FrontierReport& frontier);
ReportBundle single_run_report(const RunRecord& record);
ReportBundle probe_thirds_report(const ProbeCurve& curve, const std::string& provenance);

// Writes <stem>.tsv and <stem>.svg (and <stem>.gaps.txt when there are gaps).
void write_report(const ReportBundle& bundle, const std::filesystem::path& dir, const std::string& stem);

// Rebuilds the stores under `in` and emits the figure for `kind`:
//   frontier / dataset-size: grid.json + runs/*/record.json
//   single-run: metrics.jsonl + record.json
//   probe-thirds: probe_curve.json
std::vector<std::filesystem::path> emit_report(PlotKind kind, const std::filesystem::path& in,
                                               const std::filesystem::path& out);

// Snapshots from an append-only metrics log (last record per step wins).
std::vector<Snapshot> replay_metrics_log(const std::filesystem::path& path, std::string* config_hash = nullptr);

}  // namespace qf
