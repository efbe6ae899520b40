#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mdrlab/config.hpp"

namespace mdrlab {

inline constexpr std::string_view kCsvSchema = "mdrlab.run.v1";

// One row per training step k.
struct RunRecord {
  std::string mode;
  std::uint64_t seed = 0;
  std::size_t step = 0;
  std::size_t env_steps = 0;  // cumulative
  std::size_t episodes = 0;   // completed during this step's collection
  double reward_mean = 0.0;   // NaN when no episode finished
  double reward_std = 0.0;
  double reward_norm = 0.0;   // reward_mean / optimal return (PatchLoc), else reward_mean
  double mismatch_pre = 0.0;  // before this step's updates
  double mismatch_post = 0.0;
  double delta_r_mean_abs = 0.0;
  double delta_r_max_abs = 0.0;
  double delta_eps = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double loss_total = 0.0;
  double loss_clip = 0.0;
  double loss_value = 0.0;
  std::size_t standard_updates = 0;
  std::size_t rectification_updates = 0;
  double eval_train_reward = 0.0;  // NaN when not evaluated this step
  double eval_test_reward = 0.0;
  double wallclock = 0.0;  // seconds since run start; 0 unless enabled
};

const std::vector<std::string>& csv_columns();
std::string csv_header();
std::string format_csv_row(const RunRecord& r);
std::string csv_file_name(ModePlan mode, std::uint64_t seed);

struct RunOptions {
  std::string out_dir;      // empty: no files written
  std::ostream* log = nullptr;
};

struct RunResult {
  ModePlan mode = ModePlan::Bn;
  std::uint64_t seed = 0;
  std::vector<RunRecord> records;
  std::string csv_path;
  std::optional<std::string> error;
};

// One (mode plan, seed) run. Every random stream derives from `seed`. On a
// mid-run failure the rows so far stay in the CSV, an `# error` row is
// appended and the error is returned in the result.
RunResult run_single(const ExperimentConfig& config, ModePlan mode, std::uint64_t seed, const RunOptions& options);

// All (mode, seed) runs in order, plus `manifest.cfg` in the output
// directory: the resolved config (re-runnable with --config) with the build
// hash and per-file hashes as comments.
std::vector<RunResult> run_experiment(const ExperimentConfig& config, const RunOptions& options,
                                      const std::string& build_hash);

// Mean episode return of the Eval-mode policy (sampled actions) over
// `episodes` episodes with episode seeds 0..episodes-1.
double evaluate_policy(const Environment& prototype, ActorCritic& net, std::size_t episodes, std::uint64_t seed);

// git-style object hash: SHA-1 over "blob <size>\0" + content, lowercase hex.
std::string git_blob_sha1(std::string_view content);
std::string git_blob_sha1_file(const std::string& path);

}  // namespace mdrlab
