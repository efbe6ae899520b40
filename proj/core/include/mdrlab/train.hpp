#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mdrlab/agent.hpp"
#include "mdrlab/optim.hpp"
#include "mdrlab/rollout.hpp"

namespace mdrlab {

struct PpoConfig {
  double clip_eps = 0.2;
  double value_coef = 1.0;    // c1
  double entropy_coef = 1e-4; // c2
  std::size_t minibatch = 128;
  std::size_t epochs = 3;
  double lr = 3e-4;
  double gamma = 0.99;
  double lambda = 0.95;
  double max_grad_norm = 1.0;
  double weight_decay = 1e-4;
  // Advantages and value targets are recomputed after every this many epochs
  // (0 disables).
  std::size_t recompute_every = 3;
  bool normalize_advantages = true;
  // Log-ratio clamp before exponentiation.
  double max_log_ratio = 20.0;

  void validate() const;
};

// Per-round split of epochs into standard (Train-mode) and rectification
// (Eval-mode) phases. Each round runs standard_epochs then
// rectification_epochs; `rounds` rounds make up one training step.
struct MdrSchedule {
  std::size_t standard_epochs = 3;       // alpha_1
  std::size_t rectification_epochs = 0;  // alpha_2
  std::size_t rounds = 1;

  std::size_t epochs_per_round() const { return standard_epochs + rectification_epochs; }
  std::size_t total_epochs() const { return rounds * epochs_per_round(); }

  static MdrSchedule plain(std::size_t epochs) { return {epochs, 0, 1}; }
  static MdrSchedule eval_only(std::size_t epochs) { return {0, epochs, 1}; }
  // Splits `epochs` into rounds of (alpha1, alpha2); throws ConfigError when
  // the total is not a whole number of rounds.
  static MdrSchedule split(std::size_t epochs, std::size_t alpha1, std::size_t alpha2);
};

enum class Phase { Standard, Rectification };
std::string_view to_string(Phase phase);

struct Minibatch {
  Tensor obs;
  std::vector<std::size_t> actions;
  std::vector<double> log_prob_old;
  std::vector<double> advantages;
  std::vector<double> targets;

  std::size_t size() const { return actions.size(); }
};

Minibatch make_minibatch(const RolloutBuffer& buffer, std::span<const std::size_t> indices);

struct LossComponents {
  double total = 0.0;
  double clip = 0.0;     // L^CLIP (to be maximized)
  double value = 0.0;    // L^VF
  double entropy = 0.0;  // mean policy entropy
  double clip_fraction = 0.0;
};

struct LossResult {
  Var total;  // -L^CLIP + c1 L^VF - c2 S
  LossComponents components;
  std::vector<double> ratios;
};

// min(r A, clip(r, 1 - eps, 1 + eps) A) for one sample.
double clipped_surrogate(double ratio, double advantage, double clip_eps);

// Forward in `mode` (Train mode updates running statistics) and build the
// PPO loss for minimization. ratio = exp(log pi_mode(a|s) - log_prob_old).
LossResult ppo_loss(Tape& tape, const Minibatch& batch, ActorCritic& net, const PpoConfig& config, Mode mode);

struct UpdateLog {
  std::size_t epoch = 0;
  Phase phase = Phase::Standard;
  LossComponents loss;
  double grad_norm = 0.0;
};

struct TrainLog {
  std::vector<UpdateLog> updates;
  std::size_t standard_updates = 0;
  std::size_t rectification_updates = 0;
  std::size_t recomputes = 0;

  double mean_clip_fraction() const;
  LossComponents mean_loss() const;
};

std::size_t minibatches_per_epoch(std::size_t buffer_size, std::size_t minibatch);

// One optimization cycle on a complete buffer. Standard epochs run in Train
// mode, rectification epochs in Eval mode; every update samples without
// replacement from a per-epoch shuffle (trailing partial batch dropped),
// clips the global gradient norm and takes one Adam step. Errors are
// re-thrown with the phase and update index.
TrainLog train_step(RolloutBuffer& buffer, ActorCritic& net, const PpoConfig& config, const MdrSchedule& schedule,
                    Adam& optimizer, Rng& shuffle_rng);

}  // namespace mdrlab
