#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mdrlab/agent.hpp"
#include "mdrlab/envs.hpp"
#include "mdrlab/train.hpp"

namespace mdrlab {

enum class ModePlan { Bn, Eval, BnMdr, NoNorm, Dropout, DropoutMdr };

std::string_view to_string(ModePlan plan);
ModePlan parse_mode_plan(std::string_view name);
const std::vector<ModePlan>& all_mode_plans();

struct ExperimentConfig {
  std::string preset = "collapse-demo";
  std::string env = "patchloc";
  EnvOverrides env_overrides;
  std::vector<ModePlan> modes{ModePlan::Bn};
  std::vector<std::uint64_t> seeds{1};
  std::size_t steps = 100;  // training steps K
  std::size_t num_envs = 4;
  std::size_t steps_per_env = 128;

  std::vector<std::size_t> hidden{64, 64};
  ActivationKind activation = ActivationKind::Tanh;
  double actor_head_scale = 0.01;
  double bn_momentum = 0.1;
  double bn_eta = 1e-5;
  double dropout_rate = 0.2;
  std::size_t alpha1 = 2;
  std::size_t alpha2 = 1;
  PpoConfig ppo;

  // Held-out evaluation (GridGame generalization). eval_every = 0 disables it.
  std::size_t eval_every = 0;
  std::size_t eval_episodes = 8;
  std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
  bool checkpoints = false;
  bool wallclock = false;  // off keeps CSVs byte-reproducible
  std::string out = "runs";

  std::size_t rollout_size() const { return num_envs * steps_per_env; }
  MdrSchedule schedule(ModePlan plan) const;
  NetworkSpec network(ModePlan plan, std::size_t input_dim, std::size_t num_actions) const;
  void validate() const;

  // Fully resolved `key = value` text; parsing it yields the same config.
  std::string to_text() const;
};

// One `key = value` assignment and where it came from, for error messages.
struct ConfigEntry {
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "--set"
};

std::vector<ConfigEntry> parse_config_text(std::string_view text, const std::string& source);
std::vector<ConfigEntry> read_config_file(const std::string& path);
ConfigEntry parse_override(std::string_view assignment);

// Starts from the preset named by the last `preset` entry (default
// collapse-demo), then applies every other entry in order. Unknown keys,
// malformed values and invalid combinations throw ConfigError prefixed with
// the entry's origin.
ExperimentConfig resolve_config(const std::vector<ConfigEntry>& entries);

ExperimentConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();
std::vector<std::string> config_keys();

std::vector<std::uint64_t> parse_seed_list(std::string_view text);

}  // namespace mdrlab
