#include "mdrlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mdrlab/error.hpp"

namespace mdrlab {

void PpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip epsilon must lie in (0, 1)");
  if (value_coef < 0.0 || entropy_coef < 0.0) throw ConfigError("loss coefficients must be non-negative");
  if (minibatch == 0) throw ConfigError("minibatch size must be positive");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) throw ConfigError("gamma and lambda must lie in [0, 1]");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max grad norm must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
}

MdrSchedule MdrSchedule::split(std::size_t epochs, std::size_t alpha1, std::size_t alpha2) {
  const std::size_t per_round = alpha1 + alpha2;
  if (per_round == 0) {
    if (epochs != 0) throw ConfigError("MDR split (0, 0) cannot fill a non-zero epoch budget");
    return {0, 0, 1};
  }
  if (epochs % per_round != 0) {
    throw ConfigError("epochs (" + std::to_string(epochs) + ") must be a multiple of alpha1 + alpha2 (" +
                      std::to_string(per_round) + ")");
  }
  return {alpha1, alpha2, epochs / per_round};
}

std::string_view to_string(Phase phase) { return phase == Phase::Standard ? "standard" : "rectification"; }

Minibatch make_minibatch(const RolloutBuffer& buffer, std::span<const std::size_t> indices) {
  if (!buffer.advantages || !buffer.targets) throw Error("minibatch: buffer has no advantages; run compute_gae first");
  Minibatch mb;
  mb.obs = buffer.observations(indices);
  for (auto i : indices) {
    const Transition& tr = buffer.transitions[i];
    mb.actions.push_back(tr.action);
    mb.log_prob_old.push_back(tr.log_prob_old);
    mb.advantages.push_back((*buffer.advantages)[i]);
    mb.targets.push_back((*buffer.targets)[i]);
  }
  return mb;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantage);
}

LossResult ppo_loss(Tape& tape, const Minibatch& batch, ActorCritic& net, const PpoConfig& config, Mode mode) {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("ppo_loss: empty minibatch");
  if (batch.advantages.size() != n || batch.targets.size() != n || batch.log_prob_old.size() != n) {
    throw Error("ppo_loss: minibatch is missing advantages, targets or old log-probs");
  }
  PolicyOutput out = net.forward(tape, batch.obs, mode);
  const std::size_t num_actions = out.logits.shape()[1];
  Var log_pi = log_softmax(out.logits);

  Tensor onehot(Shape{n, num_actions});
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.actions[i] >= num_actions) throw ShapeError("ppo_loss: action out of range");
    onehot.at(i, batch.actions[i]) = 1.0;
  }
  Var logp = sum(mul(log_pi, tape.constant(std::move(onehot))), 1);
  Var log_ratio = clamp(sub(logp, tape.constant(Tensor(Shape{n}, batch.log_prob_old))), -config.max_log_ratio,
                        config.max_log_ratio);
  Var ratio = exp(log_ratio);
  Var adv = tape.constant(Tensor(Shape{n}, batch.advantages));
  Var surr1 = mul(ratio, adv);
  Var surr2 = mul(clamp(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps), adv);
  Var clip_obj = mean(minimum(surr1, surr2));

  Var value_loss = mean(square(sub(out.values, tape.constant(Tensor(Shape{n}, batch.targets)))));
  Var ent = mean(neg(sum(mul(exp(log_pi), log_pi), 1)));

  Var total = add(sub(scale(value_loss, config.value_coef), clip_obj), scale(ent, -config.entropy_coef));

  LossResult res;
  res.total = total;
  res.components.total = total.value().item();
  res.components.clip = clip_obj.value().item();
  res.components.value = value_loss.value().item();
  res.components.entropy = ent.value().item();
  res.ratios = ratio.value().values();
  std::size_t clipped = 0;
  for (double r : res.ratios) {
    if (std::abs(r - 1.0) > config.clip_eps) ++clipped;
  }
  res.components.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return res;
}

double TrainLog::mean_clip_fraction() const {
  if (updates.empty()) return 0.0;
  double s = 0.0;
  for (const auto& u : updates) s += u.loss.clip_fraction;
  return s / static_cast<double>(updates.size());
}

LossComponents TrainLog::mean_loss() const {
  LossComponents m;
  if (updates.empty()) return m;
  for (const auto& u : updates) {
    m.total += u.loss.total;
    m.clip += u.loss.clip;
    m.value += u.loss.value;
    m.entropy += u.loss.entropy;
    m.clip_fraction += u.loss.clip_fraction;
  }
  const double k = static_cast<double>(updates.size());
  m.total /= k;
  m.clip /= k;
  m.value /= k;
  m.entropy /= k;
  m.clip_fraction /= k;
  return m;
}

std::size_t minibatches_per_epoch(std::size_t buffer_size, std::size_t minibatch) {
  if (minibatch == 0) throw ConfigError("minibatch size must be positive");
  return buffer_size / minibatch;
}

TrainLog train_step(RolloutBuffer& buffer, ActorCritic& net, const PpoConfig& config, const MdrSchedule& schedule,
                    Adam& optimizer, Rng& shuffle_rng) {
  config.validate();
  if (!buffer.advantages || !buffer.targets) throw Error("train_step: buffer has no advantages; run compute_gae first");
  TrainLog log;
  const std::size_t per_epoch = minibatches_per_epoch(buffer.size(), config.minibatch);
  const std::size_t total_epochs = schedule.total_epochs();
  std::vector<std::size_t> order(buffer.size());
  std::size_t epoch = 0;
  optimizer.options().lr = config.lr;
  optimizer.options().weight_decay = config.weight_decay;
  const auto params = optimizer.params();

  const auto run_epoch = [&](Phase phase) {
    const Mode mode = phase == Phase::Standard ? Mode::Train : Mode::Eval;
    net.set_mode(mode);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::span<const std::size_t> idx(order.data() + b * config.minibatch, config.minibatch);
      try {
        const Minibatch mb = make_minibatch(buffer, idx);
        optimizer.zero_grad();
        Tape tape;
        LossResult loss = ppo_loss(tape, mb, net, config, mode);
        tape.backward(loss.total);
        UpdateLog u;
        u.epoch = epoch;
        u.phase = phase;
        u.loss = loss.components;
        for (const Parameter* p : params) p->grad.check_finite("gradient of " + p->name);
        u.grad_norm = clip_grad_global_norm(params, config.max_grad_norm);
        optimizer.step();
        log.updates.push_back(u);
        (phase == Phase::Standard ? log.standard_updates : log.rectification_updates)++;
      } catch (const NumericError& e) {
        throw NumericError(std::string(to_string(phase)) + " phase, epoch " + std::to_string(epoch) + ", update " +
                           std::to_string(b) + ": " + e.what());
      }
    }
    ++epoch;
    if (config.recompute_every > 0 && epoch % config.recompute_every == 0 && epoch < total_epochs) {
      recompute_targets(buffer, net, config.gamma, config.lambda, config.normalize_advantages);
      ++log.recomputes;
    }
  };

  for (std::size_t r = 0; r < schedule.rounds; ++r) {
    for (std::size_t e = 0; e < schedule.standard_epochs; ++e) run_epoch(Phase::Standard);
    for (std::size_t e = 0; e < schedule.rectification_epochs; ++e) run_epoch(Phase::Rectification);
  }
  return log;
}

}  // namespace mdrlab
