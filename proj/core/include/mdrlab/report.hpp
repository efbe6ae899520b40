#pragma once

#include <map>
#include <string>
#include <vector>

#include "mdrlab/diagnostics.hpp"

namespace mdrlab {

// A run CSV as written by run_single.
struct CsvTable {
  std::string path;
  std::string schema;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> errors;  // `# error` rows

  std::size_t column(const std::string& name) const;  // throws if absent
  std::vector<double> numbers(const std::string& name) const;
  std::string text(std::size_t row, const std::string& name) const;
};

CsvTable read_run_csv(const std::string& path);

// Expands a shell-style pattern; sorted, no duplicates.
std::vector<std::string> expand_glob(const std::string& pattern);

// --- SVG line charts ---------------------------------------------------------------

struct ChartSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lo;  // optional band; empty for none
  std::vector<double> hi;
  bool dashed = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
};

// Panels stacked vertically in one image.
std::string render_svg(const std::vector<Chart>& panels, double width = 720, double panel_height = 320);

// --- compare -----------------------------------------------------------------------

struct ModeSummary {
  std::string mode;
  std::size_t seeds = 0;
  double final_reward_mean = 0.0;  // mean over seeds of the final-window mean reward
  double final_reward_std = 0.0;   // std across seeds
  double mismatch_mean = 0.0;      // time-averaged mismatch_pre, mean over seeds
  double eval_train = 0.0;         // last evaluation, mean over seeds (NaN if none)
  double eval_test = 0.0;
};

struct CompareResult {
  std::vector<ModeSummary> summary;
  std::vector<std::string> images;
};

// Per-metric charts (mean +/- one std across seeds per mode), a two-panel
// reward / mismatch figure and a summary table of final-window reward per
// mode. Throws if `csv_paths` is empty or the files disagree on schema or
// columns; nothing is written in that case.
CompareResult compare_runs(const std::vector<std::string>& csv_paths, const std::string& out_dir,
                           double final_window_fraction = 0.1);

// --- scan --------------------------------------------------------------------------

struct ScanSpec {
  double clip_eps = 0.2;
  std::vector<double> levels{0.0, 0.05, 0.10, 0.15};
  double r_min = 0.4;
  double r_max = 1.6;
  std::size_t r_points = 241;
};

std::vector<double> linear_grid(double lo, double hi, std::size_t points);

// Writes scan.csv (one row per grid point and level) and scan.svg.
SaturationScan run_scan(const ScanSpec& spec, const std::string& out_dir);

}  // namespace mdrlab
