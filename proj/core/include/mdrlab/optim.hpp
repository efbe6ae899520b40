#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mdrlab/autograd.hpp"

namespace mdrlab {

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Decoupled: parameters shrink by (1 - lr * weight_decay) before the
  // moment-based delta; the moments never see the decay term.
  double weight_decay = 0.0;
};

// Per-parameter moments plus the shared step counter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions options);

  // One bias-corrected update from the gradients stored on the parameters.
  // Throws NumericError on a non-finite gradient, before touching anything.
  void step();
  void zero_grad();

  const AdamOptions& options() const { return options_; }
  AdamOptions& options() { return options_; }
  const AdamState& state() const { return state_; }
  std::span<Parameter* const> params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions options_;
  AdamState state_;
};

double global_grad_norm(std::span<Parameter* const> params);

// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
// max_norm. Returns the norm measured before clipping.
double clip_grad_global_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace mdrlab
