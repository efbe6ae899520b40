#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <variant>
#include <vector>

#include "mdrlab/autograd.hpp"
#include "mdrlab/random.hpp"

namespace mdrlab {

enum class Mode { Train, Eval };

std::string_view to_string(Mode mode);

// Affine map y = x W^T + b with W stored [out, in].
class LinearLayer {
 public:
  LinearLayer(std::size_t in_features, std::size_t out_features);

  Var forward(Tape& tape, Var x);

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  Parameter weight;
  Parameter bias;
};

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased, divide by m
};

struct BatchNormOutput {
  Var y;
  // Statistics of the incoming batch; only computed in Train mode.
  std::optional<BatchStats> stats;
};

// Per-feature batch normalization over a [batch, features] input.
//
// Train: normalize with the batch mean/variance and fold them into the
// running statistics,
//   running = (1 - momentum) * running + momentum * batch,
// exactly once per forward call. Eval: normalize with the running statistics
// and leave them untouched. Running statistics are buffers, never
// differentiated.
class BatchNormLayer {
 public:
  static constexpr double kDefaultEta = 1e-5;

  BatchNormLayer(std::size_t features, double momentum, double eta = kDefaultEta);

  BatchNormOutput forward(Tape& tape, Var x, Mode mode);

  std::size_t features() const { return gamma.value.size(); }
  double momentum() const { return momentum_; }
  double eta() const { return eta_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  Parameter gamma;
  Parameter beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

 private:
  double momentum_;
  double eta_;
  Mode mode_ = Mode::Train;
};

// Inverted dropout. Train: zero each element with probability `rate` and
// scale survivors by 1 / (1 - rate). Eval: identity, returning the input node.
class DropoutLayer {
 public:
  DropoutLayer(double rate, std::uint64_t seed);

  Var forward(Tape& tape, Var x, Mode mode);

  double rate() const { return rate_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

 private:
  double rate_;
  Rng rng_;
  Mode mode_ = Mode::Train;
};

enum class ActivationKind { Tanh, Relu };

struct ActivationLayer {
  ActivationKind kind = ActivationKind::Tanh;
  Var forward(Var x) const;
};

using Layer = std::variant<LinearLayer, BatchNormLayer, DropoutLayer, ActivationLayer>;

bool is_mode_dependent(const Layer& layer);

}  // namespace mdrlab
