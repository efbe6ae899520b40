#include "mdrlab/rollout.hpp"

#include <cmath>

#include "mdrlab/error.hpp"

namespace mdrlab {

namespace {

constexpr std::size_t kEvalChunk = 512;

Tensor stack(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t d = rows.front()->size();
  std::vector<double> data;
  data.reserve(rows.size() * d);
  for (const auto* r : rows) {
    if (r->size() != d) throw ShapeError("observation length mismatch while stacking");
    data.insert(data.end(), r->begin(), r->end());
  }
  return Tensor(Shape{rows.size(), d}, std::move(data));
}

std::vector<double> eval_values(ActorCritic& net, const std::vector<const std::vector<double>*>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (std::size_t at = 0; at < rows.size(); at += kEvalChunk) {
    const std::size_t end = std::min(rows.size(), at + kEvalChunk);
    std::vector<const std::vector<double>*> chunk(rows.begin() + static_cast<std::ptrdiff_t>(at),
                                                  rows.begin() + static_cast<std::ptrdiff_t>(end));
    Tape tape;
    PolicyOutput po = net.forward(tape, stack(chunk), Mode::Eval);
    const auto& v = po.values.value().values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void refresh_bootstrap_values(RolloutBuffer& buffer, ActorCritic& net) {
  std::vector<const std::vector<double>*> rows;
  for (const auto& seg : buffer.segments) rows.push_back(&seg.next_obs);
  buffer.bootstrap_values = eval_values(net, rows);
  buffer.truncated_values.assign(buffer.size(), 0.0);
  std::vector<std::size_t> trunc_idx;
  rows.clear();
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (buffer.transitions[i].truncated) {
      trunc_idx.push_back(i);
      rows.push_back(&buffer.transitions[i].final_obs);
    }
  }
  if (!rows.empty()) {
    const auto tv = eval_values(net, rows);
    for (std::size_t j = 0; j < trunc_idx.size(); ++j) buffer.truncated_values[trunc_idx[j]] = tv[j];
  }
}

}  // namespace

Tensor RolloutBuffer::observations(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ShapeError("rollout: empty index set");
  std::vector<const std::vector<double>*> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(&transitions.at(i).obs);
  return stack(rows);
}

Tensor RolloutBuffer::all_observations() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return observations(idx);
}

// --- pool ----------------------------------------------------------------------------

EnvPool::EnvPool(const Environment& prototype, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw ConfigError("env pool must hold at least one environment");
  for (std::size_t i = 0; i < count; ++i) {
    Slot s;
    s.env = prototype.clone();
    s.seed = derive_seed(seed, Stream::kEnv, i);
    s.action_rng = Rng(derive_seed(seed, Stream::kAction, i));
    s.obs = s.env->reset(episode_seed(s));
    slots_.push_back(std::move(s));
  }
}

std::uint64_t EnvPool::episode_seed(const Slot& s) const { return derive_seed(s.seed, s.episode); }

RolloutBuffer collect(EnvPool& pool, ActorCritic& net, std::size_t steps_per_env) {
  if (net.mode() != Mode::Eval) throw ModeError("collect: the network must be in Eval mode during interaction");
  if (steps_per_env == 0) throw ConfigError("collect: steps_per_env must be positive");
  const std::size_t n_envs = pool.size();
  // Gathered step-major, then laid out env-major so each segment is contiguous.
  std::vector<std::vector<Transition>> per_env(n_envs);
  for (auto& v : per_env) v.reserve(steps_per_env);
  RolloutBuffer buffer;
  for (std::size_t t = 0; t < steps_per_env; ++t) {
    std::vector<const std::vector<double>*> rows;
    for (auto& s : pool.slots_) rows.push_back(&s.obs);
    PolicyEvaluation ev = net.evaluate(stack(rows), Mode::Eval);
    for (std::size_t e = 0; e < n_envs; ++e) {
      auto& slot = pool.slots_[e];
      Transition tr;
      tr.action = sample(ev.dists[e], slot.action_rng);
      tr.log_prob_old = log_prob(ev.dists[e], tr.action);
      tr.value_old = ev.values[e];
      StepResult r;
      try {
        r = slot.env->step(tr.action);
      } catch (const Error& err) {
        throw EnvError(std::string("environment fault in slot ") + std::to_string(e) + ": " + err.what());
      }
      tr.obs = std::move(slot.obs);
      tr.reward = r.reward;
      tr.done = r.done && !r.info.truncated;
      tr.truncated = r.info.truncated;
      slot.episode_return += r.reward;
      if (r.done) {
        if (tr.truncated) tr.final_obs = std::move(r.obs);
        buffer.episode_returns.push_back(slot.episode_return);
        slot.episode_return = 0.0;
        ++slot.episode;
        slot.obs = slot.env->reset(pool.episode_seed(slot));
      } else {
        slot.obs = std::move(r.obs);
      }
      per_env[e].push_back(std::move(tr));
    }
  }
  for (std::size_t e = 0; e < n_envs; ++e) {
    Segment seg;
    seg.begin = buffer.transitions.size();
    for (auto& tr : per_env[e]) buffer.transitions.push_back(std::move(tr));
    seg.end = buffer.transitions.size();
    seg.next_obs = pool.slots_[e].obs;
    buffer.segments.push_back(std::move(seg));
  }
  buffer.values.reserve(buffer.size());
  for (const auto& tr : buffer.transitions) buffer.values.push_back(tr.value_old);
  refresh_bootstrap_values(buffer, net);
  return buffer;
}

// --- advantages --------------------------------------------------------------------

std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                   std::span<const double> next_values, std::span<const std::uint8_t> episode_end,
                                   double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || episode_end.size() != n) {
    throw ShapeError("gae: rewards, values, next values and episode flags must have equal length");
  }
  if (gamma < 0.0 || gamma > 1.0 || lambda < 0.0 || lambda > 1.0) throw ConfigError("gae: gamma and lambda must lie in [0, 1]");
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    running = delta + (episode_end[t] ? 0.0 : gamma * lambda * running);
    adv[t] = running;
  }
  return adv;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  const std::size_t n = buffer.size();
  if (buffer.values.size() != n || buffer.truncated_values.size() != n ||
      buffer.bootstrap_values.size() != buffer.segments.size()) {
    throw ShapeError("compute_gae: value arrays do not match the buffer");
  }
  std::vector<double> adv(n), targets(n);
  for (std::size_t s = 0; s < buffer.segments.size(); ++s) {
    const Segment& seg = buffer.segments[s];
    const std::size_t len = seg.end - seg.begin;
    std::vector<double> rewards(len), values(len), next(len);
    std::vector<std::uint8_t> ends(len);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t t = seg.begin + i;
      const Transition& tr = buffer.transitions[t];
      rewards[i] = tr.reward;
      values[i] = buffer.values[t];
      ends[i] = (tr.done || tr.truncated) ? 1 : 0;
      if (tr.done) {
        next[i] = 0.0;
      } else if (tr.truncated) {
        next[i] = buffer.truncated_values[t];
      } else {
        next[i] = (i + 1 < len) ? buffer.values[t + 1] : buffer.bootstrap_values[s];
      }
    }
    const auto a = gae_advantages(rewards, values, next, ends, gamma, lambda);
    for (std::size_t i = 0; i < len; ++i) {
      adv[seg.begin + i] = a[i];
      targets[seg.begin + i] = a[i] + values[i];
    }
  }
  buffer.advantages = std::move(adv);
  buffer.targets = std::move(targets);
}

void normalize_advantages(RolloutBuffer& buffer) {
  if (!buffer.advantages) throw Error("normalize_advantages: advantages not computed");
  auto& a = *buffer.advantages;
  if (a.empty()) return;
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (double v : a) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : a) var += (v - mean) * (v - mean);
  var /= n;
  const double sd = std::max(std::sqrt(var), 1e-8);
  for (double& v : a) v = (v - mean) / sd;
}

void refresh_values(RolloutBuffer& buffer, ActorCritic& net) {
  std::vector<const std::vector<double>*> rows;
  rows.reserve(buffer.size());
  for (const auto& tr : buffer.transitions) rows.push_back(&tr.obs);
  buffer.values = eval_values(net, rows);
  refresh_bootstrap_values(buffer, net);
}

void recompute_targets(RolloutBuffer& buffer, ActorCritic& net, double gamma, double lambda, bool normalize) {
  refresh_values(buffer, net);
  compute_gae(buffer, gamma, lambda);
  if (normalize) normalize_advantages(buffer);
}

}  // namespace mdrlab
