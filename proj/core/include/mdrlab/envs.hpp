#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mdrlab/random.hpp"
#include "mdrlab/tensor.hpp"

namespace mdrlab {

struct StepInfo {
  // Episode cut by a time limit rather than reaching a terminal state; the
  // learner bootstraps from the value of the final observation.
  bool truncated = false;
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

// Episodic environment with a discrete action set. reset(seed) followed by a
// fixed action sequence must reproduce the same trajectory.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual Shape observation_shape() const = 0;
  std::size_t observation_size() const { return shape_size(observation_shape()); }
  virtual std::size_t num_actions() const = 0;

  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(std::size_t action) = 0;

  // Contiguous feature blocks (e.g. the three views of PatchLocEnv).
  virtual std::vector<std::size_t> observation_blocks() const { return {observation_size()}; }

  virtual std::unique_ptr<Environment> clone() const = 0;
};

// --- patch localization --------------------------------------------------------------

struct PatchLocConfig {
  std::size_t image_size = 64;  // H; must be divisible by 4
  std::size_t view_size = 16;   // v
  std::size_t channels = 3;     // c
  std::size_t budget = 20;
  double step_cost = 0.01;
  // Episode seeds are drawn from this many distinct images (0 = unlimited).
  std::size_t levels = 0;
  std::uint64_t level_offset = 0;
  // Shift and scale every feature by fixed statistics of a uniform-random
  // policy's observations, so features are roughly zero-mean and unit-variance.
  bool standardize = true;
};

struct Window {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t side = 0;

  bool operator==(const Window&) const = default;
};

double window_iou(const Window& a, const Window& b);

// Locate a target crop inside a procedurally textured image by panning and
// zooming a local window. Observation: (3, v, v, c) = target view, global
// view, local view, each box-resampled and gamma-encoded to [-1, 1], then
// optionally standardized.
class PatchLocEnv final : public Environment {
 public:
  enum Action : std::size_t { kUp = 0, kDown, kLeft, kRight, kZoomIn, kZoomOut, kConfirm, kNumActions };
  static constexpr std::size_t kMaxZoom = 2;

  explicit PatchLocEnv(PatchLocConfig config = {});

  std::string id() const override { return "patchloc"; }
  Shape observation_shape() const override;
  std::size_t num_actions() const override { return kNumActions; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(std::size_t action) override;
  std::vector<std::size_t> observation_blocks() const override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PatchLocEnv>(*this); }

  const PatchLocConfig& config() const { return config_; }
  Window agent_window() const;
  const Window& target() const { return target_; }
  std::size_t zoom() const { return zoom_; }
  std::size_t steps_taken() const { return steps_; }
  const std::vector<double>& image() const { return image_; }

  // Greedy scripted action: zoom to the target's level, pan onto it, confirm.
  std::size_t oracle_action() const;
  // Return of the teleport oracle that confirms the exact target on its
  // first step; the normalizer for "percent of optimal" rewards.
  double optimal_return() const { return 1.0 - config_.step_cost; }

  std::vector<double> observe() const;
  // Places the agent window directly (test hook).
  void set_agent(std::size_t x, std::size_t y, std::size_t zoom);

 private:
  std::size_t side(std::size_t zoom) const { return config_.image_size >> zoom; }
  std::size_t stride(std::size_t zoom) const { return side(zoom) / 2; }
  void generate(Rng& rng);
  void render_view(const Window& w, std::span<double> out) const;
  double confirm_reward() const;

  PatchLocConfig config_;
  std::vector<double> image_;  // H x H x c
  Window target_;
  std::size_t x_ = 0;
  std::size_t y_ = 0;
  std::size_t zoom_ = 0;
  std::size_t steps_ = 0;
  bool done_ = true;
  // Per-feature standardization (null when disabled); shared between clones.
  std::shared_ptr<const std::vector<double>> feature_shift_;
  std::shared_ptr<const std::vector<double>> feature_scale_;
};

// --- grid game ----------------------------------------------------------------------

struct GridGameConfig {
  std::size_t length = 40;
  std::size_t horizon = 1000;
  std::size_t view_ahead = 12;
  std::size_t view_behind = 3;
  double gap_probability = 0.25;
  double progress_reward = 0.01;
  // Training levels are level_offset + [0, levels); 0 = any seed is a level.
  std::size_t levels = 0;
  std::uint64_t level_offset = 0;
};

// Side-scrolling corridor with gaps and a coin at the far end. Walking or
// landing on a gap ends the episode; reaching the coin pays 1.
class GridGameEnv final : public Environment {
 public:
  enum Action : std::size_t { kLeft = 0, kRight, kJump, kNoop, kNumActions };
  static constexpr std::size_t kJumpDistance = 3;

  explicit GridGameEnv(GridGameConfig config = {});

  std::string id() const override { return "gridgame"; }
  Shape observation_shape() const override;
  std::size_t num_actions() const override { return kNumActions; }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(std::size_t action) override;
  std::unique_ptr<Environment> clone() const override { return std::make_unique<GridGameEnv>(*this); }

  // Loads a specific level regardless of the level set.
  std::vector<double> reset_level(std::uint64_t level_seed);

  const GridGameConfig& config() const { return config_; }
  // 1 marks a gap. Pure function of (config, level seed).
  static std::vector<std::uint8_t> generate_layout(const GridGameConfig& config, std::uint64_t level_seed);
  static std::uint64_t layout_hash(std::span<const std::uint8_t> layout);
  std::uint64_t level_seed() const { return level_seed_; }
  const std::vector<std::uint8_t>& layout() const { return layout_; }
  std::size_t position() const { return x_; }
  int velocity() const { return vx_; }

 private:
  std::vector<double> observe() const;

  GridGameConfig config_;
  std::vector<std::uint8_t> layout_;
  std::uint64_t level_seed_ = 0;
  std::size_t x_ = 0;
  std::size_t best_x_ = 0;
  int vx_ = 0;
  std::size_t steps_ = 0;
  bool done_ = true;
};

// --- registry ----------------------------------------------------------------------

using EnvOverrides = std::map<std::string, double>;

// "patchloc" or "gridgame"; unknown ids or override keys throw ConfigError.
std::unique_ptr<Environment> make_env(const std::string& id, const EnvOverrides& overrides = {});
std::vector<std::string> env_override_keys(const std::string& id);

// --- distribution probe -----------------------------------------------------------

using ProbePolicy = std::function<std::size_t(const Environment&, std::span<const double> obs, Rng&)>;

struct FeatureStats {
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> var;
  // Per observation block: mean and variance over states of the block average.
  std::vector<double> block_mean;
  std::vector<double> block_var;
};

// Visits `num_states` states under `policy` (episodes reset from seeds derived
// from `seed`) and summarizes raw observation features.
FeatureStats distribution_probe(const Environment& prototype, const ProbePolicy& policy, std::size_t num_states,
                                std::uint64_t seed);

ProbePolicy uniform_random_policy();

}  // namespace mdrlab
