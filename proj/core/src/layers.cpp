#include "mdrlab/layers.hpp"

#include <cmath>

#include "mdrlab/error.hpp"

namespace mdrlab {

std::string_view to_string(Mode mode) { return mode == Mode::Train ? "train" : "eval"; }

LinearLayer::LinearLayer(std::size_t in_features, std::size_t out_features)
    : weight("weight", Tensor(Shape{out_features, in_features})), bias("bias", Tensor(Shape{out_features})) {}

Var LinearLayer::forward(Tape& tape, Var x) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || xs[1] != in_features()) {
    throw ShapeError("linear: expected input (batch, " + std::to_string(in_features()) + "), got " + shape_string(xs));
  }
  Var w = tape.leaf(weight);
  Var b = tape.leaf(bias);
  Var y = matmul_bt(x, w);
  return add(y, broadcast_to(b, y.shape()));
}

BatchNormLayer::BatchNormLayer(std::size_t features, double momentum, double eta)
    : gamma("gamma", Tensor(Shape{features}, 1.0)),
      beta("beta", Tensor(Shape{features})),
      running_mean(features, 0.0),
      running_var(features, 1.0),
      momentum_(momentum),
      eta_(eta) {
  if (!(momentum > 0.0 && momentum <= 1.0)) throw ConfigError("batchnorm: momentum must lie in (0, 1]");
  if (!(eta > 0.0)) throw ConfigError("batchnorm: eta must be positive");
}

BatchNormOutput BatchNormLayer::forward(Tape& tape, Var x, Mode mode) {
  const Shape& xs = x.shape();
  if (xs.size() != 2 || xs[1] != features()) {
    throw ShapeError("batchnorm: expected input (batch, " + std::to_string(features()) + "), got " +
                     shape_string(xs));
  }
  const std::size_t m = xs[0];
  const std::size_t n = xs[1];
  BatchNormOutput out;
  Var centered;
  Var denom;
  if (mode == Mode::Train) {
    if (m < 2) throw ShapeError("batchnorm: Train mode needs a batch of at least 2, got " + std::to_string(m));
    Var mu = mean(x, 0);
    Var var = variance(x, 0);
    BatchStats stats{mu.value().values(), var.value().values()};
    for (std::size_t j = 0; j < n; ++j) {
      running_mean[j] = (1.0 - momentum_) * running_mean[j] + momentum_ * stats.mean[j];
      running_var[j] = (1.0 - momentum_) * running_var[j] + momentum_ * stats.var[j];
    }
    out.stats = std::move(stats);
    centered = sub(x, broadcast_to(mu, xs));
    denom = broadcast_to(sqrt(add_scalar(var, eta_)), xs);
  } else {
    Var mu = tape.constant(Tensor(Shape{n}, running_mean));
    Tensor sd(Shape{n});
    for (std::size_t j = 0; j < n; ++j) sd[j] = std::sqrt(running_var[j] + eta_);
    centered = sub(x, broadcast_to(mu, xs));
    denom = broadcast_to(tape.constant(std::move(sd)), xs);
  }
  Var x_hat = div(centered, denom);
  Var g = broadcast_to(tape.leaf(gamma), xs);
  Var b = broadcast_to(tape.leaf(beta), xs);
  out.y = add(mul(x_hat, g), b);
  return out;
}

DropoutLayer::DropoutLayer(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout: rate must lie in [0, 1)");
}

Var DropoutLayer::forward(Tape& tape, Var x, Mode mode) {
  if (mode == Mode::Eval || rate_ == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate_);
  Tensor mask(x.shape());
  for (double& v : mask.data()) v = rng_.bernoulli(rate_) ? 0.0 : keep_scale;
  return mul(x, tape.constant(std::move(mask)));
}

Var ActivationLayer::forward(Var x) const { return kind == ActivationKind::Tanh ? tanh(x) : relu(x); }

bool is_mode_dependent(const Layer& layer) {
  return std::holds_alternative<BatchNormLayer>(layer) || std::holds_alternative<DropoutLayer>(layer);
}

}  // namespace mdrlab
