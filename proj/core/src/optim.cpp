#include "mdrlab/optim.hpp"

#include <cmath>

#include "mdrlab/error.hpp"

namespace mdrlab {

Adam::Adam(std::vector<Parameter*> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  if (!(options_.beta1 > 0.0 && options_.beta1 < 1.0) || !(options_.beta2 > 0.0 && options_.beta2 < 1.0)) {
    throw ConfigError("adam: betas must lie in (0, 1)");
  }
  if (!(options_.eps > 0.0)) throw ConfigError("adam: eps must be positive");
  if (options_.weight_decay < 0.0) throw ConfigError("adam: weight_decay must be non-negative");
  for (Parameter* p : params_) {
    state_.m.emplace_back(p->value.shape());
    state_.v.emplace_back(p->value.shape());
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void Adam::step() {
  for (Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
    p->grad.check_finite("gradient of " + p->name);
  }
  ++state_.t;
  const double t = static_cast<double>(state_.t);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  const double decay = 1.0 - options_.lr * options_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i]->value.data();
    auto g = params_[i]->grad.data();
    auto m = state_.m[i].data();
    auto v = state_.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] = w[j] * decay - options_.lr * m_hat / (std::sqrt(v_hat) + options_.eps);
    }
  }
}

double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.data()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_global_norm(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Parameter* p : params) {
      for (double& g : p->grad.data()) g *= factor;
    }
  }
  return norm;
}

}  // namespace mdrlab
