#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mdrlab/agent.hpp"
#include "mdrlab/envs.hpp"

namespace mdrlab {

struct Transition {
  std::vector<double> obs;
  std::size_t action = 0;
  double log_prob_old = 0.0;  // recorded under the Eval-mode policy
  double reward = 0.0;
  double value_old = 0.0;
  bool done = false;
  bool truncated = false;
  // Observation reached on a truncated step, used for bootstrapping.
  std::vector<double> final_obs;
};

// Consecutive transitions from one environment of the pool.
struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;
  // Observation after the last transition (bootstrap source when the segment
  // ends mid-episode).
  std::vector<double> next_obs;
};

// The dataset D_k of one training step.
struct RolloutBuffer {
  std::size_t step = 0;
  std::vector<Transition> transitions;
  std::vector<Segment> segments;
  // Current value estimates used by GAE. Initialized from value_old and
  // refreshed by recompute_targets; index-aligned with transitions.
  std::vector<double> values;
  std::vector<double> bootstrap_values;   // one per segment
  std::vector<double> truncated_values;   // per transition; 0 unless truncated
  std::optional<std::vector<double>> advantages;
  std::optional<std::vector<double>> targets;
  std::vector<double> episode_returns;    // episodes completed during collection

  std::size_t size() const { return transitions.size(); }
  // Stacks the observations at `indices` into a [n, obs_dim] tensor.
  Tensor observations(std::span<const std::size_t> indices) const;
  Tensor all_observations() const;
};

// A fixed set of environments stepped in lock-step. Each slot owns its action
// RNG and episode counter, so results do not depend on scheduling.
class EnvPool {
 public:
  EnvPool(const Environment& prototype, std::size_t count, std::uint64_t seed);

  std::size_t size() const { return slots_.size(); }
  Environment& env(std::size_t i) { return *slots_.at(i).env; }
  const Environment& env(std::size_t i) const { return *slots_.at(i).env; }
  std::size_t observation_size() const { return slots_.front().env->observation_size(); }
  std::size_t num_actions() const { return slots_.front().env->num_actions(); }

 private:
  friend RolloutBuffer collect(EnvPool&, ActorCritic&, std::size_t);

  struct Slot {
    std::unique_ptr<Environment> env;
    Rng action_rng;
    std::uint64_t seed = 0;
    std::uint64_t episode = 0;
    std::vector<double> obs;
    double episode_return = 0.0;
  };

  std::uint64_t episode_seed(const Slot& s) const;

  std::vector<Slot> slots_;
};

// Runs steps_per_env steps in every environment with the Eval-mode policy.
// Throws ModeError if the network is not in Eval mode. Episodes carry over
// between calls.
RolloutBuffer collect(EnvPool& pool, ActorCritic& net, std::size_t steps_per_env);

// Generalized advantage estimation over one stream of transitions.
// next_values[t] is the value bootstrapped after step t (0 at true terminals)
// and episode_end[t] stops accumulation across an episode boundary.
std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const double> next_values, std::span<const std::uint8_t> episode_end,
                                   double gamma, double lambda);

// Fills advantages and targets (A + V) from the buffer's current values.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

// Per-buffer: subtract mean, divide by max(std, 1e-8).
void normalize_advantages(RolloutBuffer& buffer);

// Re-evaluates values (and bootstrap values) under the current weights in
// Eval mode, then recomputes GAE and, optionally, normalization.
// log_prob_old is left untouched.
void recompute_targets(RolloutBuffer& buffer, ActorCritic& net, double gamma, double lambda, bool normalize);

// Evaluates values for every observation the buffer needs (transitions,
// segment ends, truncated steps) in Eval mode.
void refresh_values(RolloutBuffer& buffer, ActorCritic& net);

}  // namespace mdrlab
