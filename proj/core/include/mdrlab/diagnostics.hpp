#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mdrlab/agent.hpp"
#include "mdrlab/rollout.hpp"

namespace mdrlab {

// Jensen-Shannon divergence with natural log, in [0, ln 2]. Probabilities are
// floored at 1e-12 inside the logarithms.
double js_divergence(std::span<const double> p, std::span<const double> q);

// Train/Eval policy mismatch over one buffer.
struct MismatchReport {
  std::size_t step = 0;
  double mean = 0.0;                  // average JS over every measured state
  std::vector<double> per_minibatch;  // average JS per minibatch
};

// Partitions the buffer into minibatches of `minibatch` states (a seeded
// shuffle, trailing partial batch dropped) and compares, per state, the policy
// the optimizer sees (forward in `update_mode`: batch statistics and a fresh
// dropout mask under Train) with the Eval-mode rollout policy. Running
// statistics and dropout streams are restored afterwards, so the measurement
// has no side effects. With update_mode = Eval the result is exactly 0.
MismatchReport policy_mismatch(const RolloutBuffer& buffer, ActorCritic& net, std::size_t minibatch,
                               std::uint64_t seed, Mode update_mode = Mode::Train);

struct RatioPerturbationReport {
  std::vector<double> ratio_train;  // r' per measured transition
  std::vector<double> ratio_eval;   // r per measured transition
  std::vector<double> delta_r;      // r' - r
  double mean_abs = 0.0;
  double max_abs = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double q99 = 0.0;
  // Largest excursion |r - 1| - eps among transitions whose perturbed ratio
  // r' is still inside the clip band while the true ratio r is outside it.
  double delta_eps = 0.0;
  std::size_t violations = 0;
};

// r' uses the update-mode forward, r the Eval-mode forward, both against the
// recorded log_prob_old.
RatioPerturbationReport ratio_perturbation(const RolloutBuffer& buffer, ActorCritic& net, std::size_t minibatch,
                                           double clip_eps, std::uint64_t seed, Mode update_mode = Mode::Train);

struct DeltaEpsEstimate {
  double delta_eps = 0.0;
  std::size_t violations = 0;
};

// Over pairs where the perturbed ratio r' sits inside [1 - eps, 1 + eps] but
// the true ratio r does not, the largest |r - 1| - eps; 0 if there are none.
DeltaEpsEstimate estimate_delta_eps(std::span<const double> ratio_perturbed, std::span<const double> ratio_true,
                                    double clip_eps);

struct SaturationCell {
  double r = 0.0;
  double delta_r = 0.0;
  double lo = 0.0;  // effective unclipped interval [lo, hi]
  double hi = 0.0;
  bool clipped = false;
};

struct SaturationScan {
  double clip_eps = 0.0;
  std::vector<double> r_grid;
  std::vector<double> levels;
  std::vector<SaturationCell> cells;  // level-major

  // Effective interval for one perturbation level.
  std::pair<double, double> interval(double delta_r) const;
};

// For each (r, delta_r) with the worst-case sign of the perturbation: r is
// unclipped iff some |d| <= delta_r puts r + d inside [1 - eps, 1 + eps],
// i.e. r lies in [1 - (eps + delta_r), 1 + (eps + delta_r)].
SaturationScan clip_saturation_scan(std::span<const double> r_grid, std::span<const double> levels, double clip_eps);

struct CollapseEvent {
  std::size_t onset = 0;  // first index of the window that fell below threshold
  double pre_collapse_mean = 0.0;
  double trough = 0.0;
  bool recovered = false;
  std::optional<std::size_t> recovery;
};

// Sustained-drop detector over a per-step reward series: an event fires when
// the trailing window mean falls below drop_fraction times its running peak
// and stays below for at least `window` consecutive steps.
std::vector<CollapseEvent> detect_collapse(std::span<const double> series, std::size_t window, double drop_fraction);

double pearson_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace mdrlab
