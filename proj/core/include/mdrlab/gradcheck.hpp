#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mdrlab {

struct GradcheckOptions {
  std::size_t networks = 20;
  std::uint64_t seed = 0;
  double step = 1e-4;  // central-difference h
  double abs_tol = 1e-6;
  double rel_tol = 1e-4;
  // Coordinates probed per parameter tensor (all of them when smaller).
  std::size_t coords_per_parameter = 16;
};

struct GradcheckCase {
  std::string name;
  std::size_t coordinates = 0;
  std::size_t failures = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed() const { return failures == 0; }
};

// Random small actor-critic networks (cycling through no mode-dependent
// layer, BatchNorm, Dropout and both), each checked on the full PPO loss in
// Train mode, plus Eval mode where it differs. A coordinate passes when the
// absolute error is within abs_tol or the relative error within rel_tol.
// Buffers are restored before every loss evaluation so dropout masks and
// batch statistics are identical across perturbations.
std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& options = {});

}  // namespace mdrlab
