#include "mdrlab/report.hpp"

#include <glob.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "mdrlab/error.hpp"

namespace mdrlab {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string fmt(double v, const char* spec = "%.17g") {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  return colors[i % 7];
}

// Round step for roughly `target` ticks across [lo, hi].
double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  const double step = norm < 1.5 ? 1.0 : norm < 3.0 ? 2.0 : norm < 7.0 ? 5.0 : 10.0;
  return step * mag;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << content;
}

void mean_std_finite(const std::vector<double>& xs, double& mean, double& sd) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : xs) {
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  }
  if (n == 0) {
    mean = sd = kNaN;
    return;
  }
  mean = s / static_cast<double>(n);
  double ss = 0.0;
  for (double x : xs) {
    if (std::isfinite(x)) ss += (x - mean) * (x - mean);
  }
  sd = std::sqrt(ss / static_cast<double>(n));
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw Error(path + ": no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> CsvTable::numbers(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    if (c >= row.size() || row[c] == "nan" || row[c].empty()) {
      out.push_back(kNaN);
    } else {
      out.push_back(std::strtod(row[c].c_str(), nullptr));
    }
  }
  return out;
}

std::string CsvTable::text(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }

CsvTable read_run_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  CsvTable t;
  t.path = path;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.rfind("#schema=", 0) == 0) {
      t.schema = line.substr(8);
      continue;
    }
    if (line.rfind("# error", 0) == 0) {
      t.errors.push_back(line);
      continue;
    }
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      t.columns = split_csv_line(line);
      header = true;
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != t.columns.size()) {
      throw Error(path + ": row with " + std::to_string(cells.size()) + " cells, header has " +
                  std::to_string(t.columns.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (t.schema.empty()) throw Error(path + ": missing #schema line");
  if (!header) throw Error(path + ": missing header row");
  return t;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::set<std::string> found;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) found.insert(g.gl_pathv[i]);
  }
  globfree(&g);
  return {found.begin(), found.end()};
}

std::string render_svg(const std::vector<Chart>& panels, double width, double panel_height) {
  const double ml = 72, mr = 150, mt = 34, mb = 46;
  const double height = panel_height * static_cast<double>(panels.size());
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const Chart& ch = panels[p];
    const double oy = panel_height * static_cast<double>(p);
    const double pw = width - ml - mr, ph = panel_height - mt - mb;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : ch.series) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.y[i])) continue;
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        const double lo = s.lo.empty() ? s.y[i] : s.lo[i];
        const double hi = s.hi.empty() ? s.y[i] : s.hi[i];
        ymin = std::min({ymin, s.y[i], lo});
        ymax = std::max({ymax, s.y[i], hi});
      }
    }
    if (!std::isfinite(xmin)) {
      xmin = 0;
      xmax = 1;
      ymin = 0;
      ymax = 1;
    }
    if (xmax <= xmin) xmax = xmin + 1;
    if (ymax <= ymin) {
      ymin -= 0.5;
      ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto sx = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double y) { return oy + mt + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    os << "<text x=\"" << ml << "\" y=\"" << oy + 20 << "\" font-size=\"14\" font-weight=\"bold\">"
       << xml_escape(ch.title) << "</text>\n";
    os << "<rect x=\"" << ml << "\" y=\"" << oy + mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444\"/>\n";
    const double xs = nice_step(xmax - xmin, 6), ys = nice_step(ymax - ymin, 5);
    for (double t = std::ceil(xmin / xs) * xs; t <= xmax + 1e-12; t += xs) {
      os << "<line x1=\"" << sx(t) << "\" y1=\"" << oy + mt + ph << "\" x2=\"" << sx(t) << "\" y2=\""
         << oy + mt + ph + 4 << "\" stroke=\"#444\"/><text x=\"" << sx(t) << "\" y=\"" << oy + mt + ph + 17
         << "\" text-anchor=\"middle\">" << fmt(t, "%g") << "</text>\n";
    }
    for (double t = std::ceil(ymin / ys) * ys; t <= ymax + 1e-12; t += ys) {
      os << "<line x1=\"" << ml << "\" y1=\"" << sy(t) << "\" x2=\"" << ml + pw << "\" y2=\"" << sy(t)
         << "\" stroke=\"#eee\"/><text x=\"" << ml - 6 << "\" y=\"" << sy(t) + 4 << "\" text-anchor=\"end\">"
         << fmt(std::abs(t) < 1e-12 * ys ? 0.0 : t, "%g") << "</text>\n";
    }
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << oy + panel_height - 10 << "\" text-anchor=\"middle\">"
       << xml_escape(ch.x_label) << "</text>\n";
    os << "<text transform=\"translate(16," << oy + mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << xml_escape(ch.y_label) << "</text>\n";

    for (std::size_t si = 0; si < ch.series.size(); ++si) {
      const auto& s = ch.series[si];
      const char* color = palette(si);
      if (!s.lo.empty()) {
        std::ostringstream pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
          if (std::isfinite(s.hi[i])) pts << sx(s.x[i]) << ',' << sy(s.hi[i]) << ' ';
        }
        for (std::size_t i = s.x.size(); i-- > 0;) {
          if (std::isfinite(s.lo[i])) pts << sx(s.x[i]) << ',' << sy(s.lo[i]) << ' ';
        }
        os << "<polygon points=\"" << pts.str() << "\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
      }
      std::ostringstream pts;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::isfinite(s.y[i])) pts << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
      }
      os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\""
         << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << "/>\n";
      const double ly = oy + mt + 14 + 18 * static_cast<double>(si);
      os << "<line x1=\"" << ml + pw + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << ml + pw + 30 << "\" y2=\""
         << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << ml + pw + 36 << "\" y=\""
         << ly << "\">" << xml_escape(s.name) << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

CompareResult compare_runs(const std::vector<std::string>& csv_paths, const std::string& out_dir,
                           double final_window_fraction) {
  if (csv_paths.empty()) throw Error("compare: no CSV files matched");
  std::vector<CsvTable> tables;
  for (const auto& p : csv_paths) tables.push_back(read_run_csv(p));
  for (const auto& t : tables) {
    if (t.schema != tables.front().schema) {
      throw Error("compare: mixed schemas ('" + tables.front().schema + "' in " + tables.front().path + ", '" +
                  t.schema + "' in " + t.path + ")");
    }
    if (t.columns != tables.front().columns) {
      throw Error("compare: column layout of " + t.path + " differs from " + tables.front().path);
    }
  }

  // mode -> runs (one table per seed), in first-seen order.
  std::vector<std::string> modes;
  std::map<std::string, std::vector<const CsvTable*>> by_mode;
  for (const auto& t : tables) {
    if (t.rows.empty()) continue;
    const std::string mode = t.text(0, "mode");
    if (!by_mode.count(mode)) modes.push_back(mode);
    by_mode[mode].push_back(&t);
  }
  if (modes.empty()) throw Error("compare: the CSV files contain no rows");

  // Mean and std across seeds at each step.
  auto aggregate = [&](const std::string& mode, const std::string& metric) {
    ChartSeries s;
    s.name = mode + " (n=" + std::to_string(by_mode[mode].size()) + ")";
    std::size_t len = 0;
    for (const CsvTable* t : by_mode[mode]) len = std::max(len, t->rows.size());
    for (std::size_t i = 0; i < len; ++i) {
      std::vector<double> vals;
      double step = static_cast<double>(i);
      for (const CsvTable* t : by_mode[mode]) {
        if (i < t->rows.size()) {
          vals.push_back(t->numbers(metric)[i]);
          step = t->numbers("step")[i];
        }
      }
      double m = 0.0, sd = 0.0;
      mean_std_finite(vals, m, sd);
      s.x.push_back(step);
      s.y.push_back(m);
      s.lo.push_back(m - sd);
      s.hi.push_back(m + sd);
    }
    return s;
  };

  fs::create_directories(out_dir);
  CompareResult result;
  const std::vector<std::pair<std::string, std::string>> metrics{
      {"reward_mean", "episode reward"},
      {"reward_norm", "reward / optimal"},
      {"mismatch_pre", "policy mismatch before update (JS)"},
      {"mismatch_post", "policy mismatch after update (JS)"},
      {"delta_r_mean_abs", "mean |ratio perturbation|"},
      {"delta_eps", "clip boundary shift"},
      {"clip_fraction", "clip fraction"},
      {"entropy", "policy entropy"},
      {"eval_train_reward", "eval reward, training levels"},
      {"eval_test_reward", "eval reward, held-out levels"},
  };
  for (const auto& [metric, label] : metrics) {
    Chart chart{label, "training step", label, {}};
    bool any = false;
    for (const auto& mode : modes) {
      ChartSeries s = aggregate(mode, metric);
      any = any || std::any_of(s.y.begin(), s.y.end(), [](double v) { return std::isfinite(v); });
      chart.series.push_back(std::move(s));
    }
    if (!any) continue;
    const fs::path path = fs::path(out_dir) / (metric + ".svg");
    write_text(path, render_svg({chart}));
    result.images.push_back(path.string());
  }
  {
    Chart top{"reward", "training step", "episode reward", {}};
    Chart bottom{"policy mismatch", "training step", "JS divergence", {}};
    for (const auto& mode : modes) {
      top.series.push_back(aggregate(mode, "reward_mean"));
      bottom.series.push_back(aggregate(mode, "mismatch_pre"));
    }
    const fs::path path = fs::path(out_dir) / "reward_mismatch.svg";
    write_text(path, render_svg({top, bottom}));
    result.images.push_back(path.string());
  }

  std::ostringstream csv, md;
  csv << "mode,seeds,final_reward_mean,final_reward_std,mismatch_mean,eval_train,eval_test\n";
  md << "| mode | seeds | final-window reward | mismatch (mean) | eval train | eval held-out |\n";
  md << "|---|---|---|---|---|---|\n";
  for (const auto& mode : modes) {
    ModeSummary ms;
    ms.mode = mode;
    ms.seeds = by_mode[mode].size();
    std::vector<double> finals, mism, etrain, etest;
    for (const CsvTable* t : by_mode[mode]) {
      const auto reward = t->numbers("reward_mean");
      const std::size_t n = reward.size();
      const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(final_window_fraction * n)));
      std::vector<double> tail(reward.end() - static_cast<std::ptrdiff_t>(w), reward.end());
      double m = 0.0, sd = 0.0;
      mean_std_finite(tail, m, sd);
      finals.push_back(m);
      mean_std_finite(t->numbers("mismatch_pre"), m, sd);
      mism.push_back(m);
      auto last_finite = [](const std::vector<double>& v) {
        for (std::size_t i = v.size(); i-- > 0;) {
          if (std::isfinite(v[i])) return v[i];
        }
        return kNaN;
      };
      etrain.push_back(last_finite(t->numbers("eval_train_reward")));
      etest.push_back(last_finite(t->numbers("eval_test_reward")));
    }
    double sd = 0.0;
    mean_std_finite(finals, ms.final_reward_mean, ms.final_reward_std);
    mean_std_finite(mism, ms.mismatch_mean, sd);
    mean_std_finite(etrain, ms.eval_train, sd);
    mean_std_finite(etest, ms.eval_test, sd);
    csv << mode << ',' << ms.seeds << ',' << fmt(ms.final_reward_mean) << ',' << fmt(ms.final_reward_std) << ','
        << fmt(ms.mismatch_mean) << ',' << fmt(ms.eval_train) << ',' << fmt(ms.eval_test) << '\n';
    md << "| " << mode << " | " << ms.seeds << " | " << fmt(ms.final_reward_mean, "%.4f") << " ± "
       << fmt(ms.final_reward_std, "%.4f") << " | " << fmt(ms.mismatch_mean, "%.3g") << " | "
       << fmt(ms.eval_train, "%.4f") << " | " << fmt(ms.eval_test, "%.4f") << " |\n";
    result.summary.push_back(ms);
  }
  write_text(fs::path(out_dir) / "summary.csv", csv.str());
  write_text(fs::path(out_dir) / "summary.md", md.str());
  return result;
}

std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  if (points < 2 || !(hi > lo)) throw ConfigError("grid needs at least 2 points and hi > lo");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  }
  return g;
}

SaturationScan run_scan(const ScanSpec& spec, const std::string& out_dir) {
  const auto grid = linear_grid(spec.r_min, spec.r_max, spec.r_points);
  SaturationScan scan = clip_saturation_scan(grid, spec.levels, spec.clip_eps);
  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "#schema=mdrlab.scan.v1\n";
  csv << "delta_r,r,lo,hi,clipped,clipped_ratio\n";
  for (const auto& c : scan.cells) {
    csv << fmt(c.delta_r) << ',' << fmt(c.r) << ',' << fmt(c.lo) << ',' << fmt(c.hi) << ',' << (c.clipped ? 1 : 0)
        << ',' << fmt(std::clamp(c.r, c.lo, c.hi)) << '\n';
  }
  write_text(fs::path(out_dir) / "scan.csv", csv.str());

  Chart chart{"clip saturation, eps = " + fmt(spec.clip_eps, "%g"), "ratio r", "clip(r) under perturbation", {}};
  for (std::size_t li = 0; li < spec.levels.size(); ++li) {
    ChartSeries s;
    s.name = "dr = " + fmt(spec.levels[li], "%g");
    s.dashed = spec.levels[li] == 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto& c = scan.cells[li * grid.size() + i];
      s.x.push_back(c.r);
      s.y.push_back(std::clamp(c.r, c.lo, c.hi));
    }
    chart.series.push_back(std::move(s));
  }
  write_text(fs::path(out_dir) / "scan.svg", render_svg({chart}));
  return scan;
}

}  // namespace mdrlab
