#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "mdrlab/config.hpp"
#include "mdrlab/error.hpp"
#include "mdrlab/experiment.hpp"
#include "mdrlab/gradcheck.hpp"
#include "mdrlab/report.hpp"

namespace {

using namespace mdrlab;

std::string build_hash(const char* argv0) {
  std::error_code ec;
  for (const std::string& candidate : {std::string("/proc/self/exe"), std::string(argv0)}) {
    if (std::filesystem::exists(candidate, ec)) {
      try {
        return git_blob_sha1_file(candidate);
      } catch (const Error&) {
      }
    }
  }
  return "unknown";
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& sets, const std::string& out,
            const std::string& seeds, bool quiet, const char* argv0) {
  std::vector<ConfigEntry> entries;
  if (!config_path.empty()) entries = read_config_file(config_path);
  if (const char* env_seed = std::getenv("MDRLAB_SEED")) {
    entries.push_back({"seeds", env_seed, "MDRLAB_SEED"});
  }
  for (const auto& s : sets) entries.push_back(parse_override(s));
  if (!seeds.empty()) entries.push_back({"seeds", seeds, "--seeds"});
  if (!out.empty()) entries.push_back({"out", out, "--out"});
  const ExperimentConfig cfg = resolve_config(entries);

  RunOptions opts;
  opts.out_dir = cfg.out;
  opts.log = quiet ? nullptr : &std::cerr;
  const auto results = run_experiment(cfg, opts, build_hash(argv0));
  int failures = 0;
  for (const auto& r : results) {
    if (r.error) {
      ++failures;
      std::cerr << "error: " << to_string(r.mode) << " seed " << r.seed << ": " << *r.error << '\n';
    } else {
      std::cout << r.csv_path << '\n';
    }
  }
  std::cout << (std::filesystem::path(cfg.out) / "manifest.cfg").string() << '\n';
  return failures ? 1 : 0;
}

int cmd_compare(const std::vector<std::string>& patterns, const std::string& out) {
  std::vector<std::string> paths;
  for (const auto& p : patterns) {
    for (auto& m : expand_glob(p)) paths.push_back(std::move(m));
  }
  const CompareResult res = compare_runs(paths, out);
  std::printf("%-12s %5s %22s %14s %12s %12s\n", "mode", "seeds", "final reward", "mismatch", "eval train",
              "eval test");
  for (const auto& s : res.summary) {
    std::printf("%-12s %5zu %10.4f +- %-8.4f %14.4g %12.4f %12.4f\n", s.mode.c_str(), s.seeds, s.final_reward_mean,
                s.final_reward_std, s.mismatch_mean, s.eval_train, s.eval_test);
  }
  for (const auto& img : res.images) std::cout << img << '\n';
  return 0;
}

int cmd_scan(const ScanSpec& spec, const std::string& out) {
  const SaturationScan scan = run_scan(spec, out);
  for (double d : scan.levels) {
    const auto [lo, hi] = scan.interval(d);
    std::printf("dr=%-6g effective interval [%.17g, %.17g]\n", d, lo, hi);
  }
  std::cout << (std::filesystem::path(out) / "scan.csv").string() << '\n'
            << (std::filesystem::path(out) / "scan.svg").string() << '\n';
  return 0;
}

int cmd_gradcheck(const GradcheckOptions& opt) {
  const auto cases = run_gradcheck(opt);
  std::size_t failed = 0;
  for (const auto& c : cases) {
    std::printf("%-5s %-24s coords=%-4zu max_abs=%.3e max_rel=%.3e\n", c.passed() ? "ok" : "FAIL", c.name.c_str(),
                c.coordinates, c.max_abs_error, c.max_rel_error);
    if (!c.passed()) ++failed;
  }
  std::printf("%zu/%zu cases passed\n", cases.size() - failed, cases.size());
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mdrlab: PPO with mode-dependent layers, MDR training and diagnostics"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run every (mode plan, seed) of a config; one CSV per run");
  std::string config_path, out, seeds;
  std::vector<std::string> sets;
  bool quiet = false;
  run->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  run->add_option("--set", sets, "Override key=value (repeatable)")->allow_extra_args(false);
  run->add_option("--out", out, "Output directory");
  run->add_option("--seeds", seeds, "Seed list, e.g. 1,2,3");
  run->add_flag("--quiet", quiet, "No per-step progress on stderr");

  auto* compare = app.add_subcommand("compare", "Plot mean +- std across seeds and summarize CSV runs");
  std::vector<std::string> patterns;
  std::string compare_out = "compare";
  compare->add_option("csv", patterns, "CSV files or glob patterns")->required();
  compare->add_option("--out", compare_out, "Output directory");

  auto* scan = app.add_subcommand("scan", "Clip saturation under ratio perturbation");
  ScanSpec scan_spec;
  std::string scan_out = "scan";
  scan->add_option("--eps", scan_spec.clip_eps, "Clip epsilon")->capture_default_str();
  scan->add_option("--levels", scan_spec.levels, "Perturbation levels")->delimiter(',')->capture_default_str();
  scan->add_option("--r-min", scan_spec.r_min, "Grid start")->capture_default_str();
  scan->add_option("--r-max", scan_spec.r_max, "Grid end")->capture_default_str();
  scan->add_option("--points", scan_spec.r_points, "Grid points")->capture_default_str();
  scan->add_option("--out", scan_out, "Output directory");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the PPO loss gradients");
  GradcheckOptions gopt;
  grad->add_option("--networks", gopt.networks, "Random networks to check")->capture_default_str();
  grad->add_option("--seed", gopt.seed, "Seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, sets, out, seeds, quiet, argv[0]);
    if (*compare) return cmd_compare(patterns, compare_out);
    if (*scan) return cmd_scan(scan_spec, scan_out);
    if (*grad) return cmd_gradcheck(gopt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
