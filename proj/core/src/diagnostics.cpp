#include "mdrlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "mdrlab/error.hpp"

namespace mdrlab {

namespace {

constexpr double kProbFloor = 1e-12;

double kl_to_mixture(std::span<const double> p, std::span<const double> m) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(std::max(p[i], kProbFloor)) - std::log(std::max(m[i], kProbFloor)));
  }
  return kl;
}

std::vector<std::vector<std::size_t>> partition(std::size_t n, std::size_t minibatch, std::uint64_t seed) {
  if (minibatch == 0) throw ConfigError("minibatch size must be positive");
  if (n < minibatch) {
    throw Error("buffer of " + std::to_string(n) + " transitions is smaller than one minibatch of " +
                std::to_string(minibatch));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, Stream::kDiagnostics));
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> batches(n / minibatch);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    batches[b].assign(order.begin() + static_cast<std::ptrdiff_t>(b * minibatch),
                      order.begin() + static_cast<std::ptrdiff_t>((b + 1) * minibatch));
  }
  return batches;
}

// Evaluation with every buffer restored afterwards.
PolicyEvaluation evaluate_side_effect_free(ActorCritic& net, const Tensor& obs, Mode mode) {
  const BufferState saved = net.buffers();
  PolicyEvaluation ev = net.evaluate(obs, mode);
  net.restore_buffers(saved);
  return ev;
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

}  // namespace

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("js_divergence: distributions have different lengths");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  const double js = 0.5 * kl_to_mixture(p, m) + 0.5 * kl_to_mixture(q, m);
  return std::clamp(js, 0.0, std::numbers::ln2);
}

MismatchReport policy_mismatch(const RolloutBuffer& buffer, ActorCritic& net, std::size_t minibatch,
                               std::uint64_t seed, Mode update_mode) {
  MismatchReport report;
  report.step = buffer.step;
  const auto batches = partition(buffer.size(), minibatch, seed);
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& idx : batches) {
    const Tensor obs = buffer.observations(idx);
    const PolicyEvaluation train = evaluate_side_effect_free(net, obs, update_mode);
    const PolicyEvaluation eval = net.evaluate(obs, Mode::Eval);
    double batch_sum = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      batch_sum += js_divergence(train.dists[i].probs(), eval.dists[i].probs());
    }
    report.per_minibatch.push_back(batch_sum / static_cast<double>(idx.size()));
    total += batch_sum;
    count += idx.size();
  }
  report.mean = total / static_cast<double>(count);
  return report;
}

RatioPerturbationReport ratio_perturbation(const RolloutBuffer& buffer, ActorCritic& net, std::size_t minibatch,
                                           double clip_eps, std::uint64_t seed, Mode update_mode) {
  RatioPerturbationReport rep;
  const auto batches = partition(buffer.size(), minibatch, seed);
  for (const auto& idx : batches) {
    const Tensor obs = buffer.observations(idx);
    const PolicyEvaluation train = evaluate_side_effect_free(net, obs, update_mode);
    const PolicyEvaluation eval = net.evaluate(obs, Mode::Eval);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Transition& tr = buffer.transitions[idx[i]];
      const double r_train = std::exp(log_prob(train.dists[i], tr.action) - tr.log_prob_old);
      const double r_eval = std::exp(log_prob(eval.dists[i], tr.action) - tr.log_prob_old);
      rep.ratio_train.push_back(r_train);
      rep.ratio_eval.push_back(r_eval);
      rep.delta_r.push_back(r_train - r_eval);
    }
  }
  const DeltaEpsEstimate de = estimate_delta_eps(rep.ratio_train, rep.ratio_eval, clip_eps);
  rep.delta_eps = de.delta_eps;
  rep.violations = de.violations;
  std::vector<double> abs_dr;
  abs_dr.reserve(rep.delta_r.size());
  for (double d : rep.delta_r) abs_dr.push_back(std::abs(d));
  if (!abs_dr.empty()) {
    rep.mean_abs = std::accumulate(abs_dr.begin(), abs_dr.end(), 0.0) / static_cast<double>(abs_dr.size());
    rep.max_abs = *std::max_element(abs_dr.begin(), abs_dr.end());
    rep.q50 = quantile(abs_dr, 0.5);
    rep.q90 = quantile(abs_dr, 0.9);
    rep.q99 = quantile(abs_dr, 0.99);
  }
  return rep;
}

DeltaEpsEstimate estimate_delta_eps(std::span<const double> ratio_perturbed, std::span<const double> ratio_true,
                                    double clip_eps) {
  if (ratio_perturbed.size() != ratio_true.size()) throw ShapeError("estimate_delta_eps: length mismatch");
  DeltaEpsEstimate est;
  for (std::size_t i = 0; i < ratio_true.size(); ++i) {
    const double excess = std::abs(ratio_true[i] - 1.0) - clip_eps;
    if (std::abs(ratio_perturbed[i] - 1.0) <= clip_eps && excess > 0.0) {
      ++est.violations;
      est.delta_eps = std::max(est.delta_eps, excess);
    }
  }
  return est;
}

std::pair<double, double> SaturationScan::interval(double delta_r) const {
  return {1.0 - (clip_eps + delta_r), 1.0 + (clip_eps + delta_r)};
}

SaturationScan clip_saturation_scan(std::span<const double> r_grid, std::span<const double> levels, double clip_eps) {
  if (!(clip_eps > 0.0)) throw ConfigError("saturation scan: epsilon must be positive");
  if (!std::is_sorted(r_grid.begin(), r_grid.end())) throw ConfigError("saturation scan: ratio grid must be sorted");
  for (double d : levels) {
    if (d < 0.0) throw ConfigError("saturation scan: perturbation levels must be non-negative");
  }
  SaturationScan scan;
  scan.clip_eps = clip_eps;
  scan.r_grid.assign(r_grid.begin(), r_grid.end());
  scan.levels.assign(levels.begin(), levels.end());
  for (double d : levels) {
    const auto [lo, hi] = scan.interval(d);
    for (double r : r_grid) scan.cells.push_back({r, d, lo, hi, r < lo || r > hi});
  }
  return scan;
}

std::vector<CollapseEvent> detect_collapse(std::span<const double> series, std::size_t window, double drop_fraction) {
  if (window == 0) throw ConfigError("collapse detection: window must be positive");
  if (series.size() <= 2 * window) {
    throw ConfigError("collapse detection: series length must exceed twice the window");
  }
  const std::size_t n = series.size();
  std::vector<double> wmean(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += series[i];
    if (i >= window) acc -= series[i - window];
    wmean[i] = acc / static_cast<double>(window);
  }
  std::vector<CollapseEvent> events;
  double peak = wmean[window - 1];
  std::size_t i = window - 1;
  while (i < n) {
    peak = std::max(peak, wmean[i]);
    const double threshold = drop_fraction * peak;
    if (peak > 0.0 && wmean[i] < threshold) {
      std::size_t j = i;
      while (j < n && wmean[j] < threshold) ++j;
      if (j - i >= window) {
        CollapseEvent ev;
        ev.onset = i + 1 - window;
        ev.pre_collapse_mean = peak;
        ev.trough = *std::min_element(series.begin() + static_cast<std::ptrdiff_t>(i),
                                      series.begin() + static_cast<std::ptrdiff_t>(j));
        if (j < n) {
          ev.recovered = true;
          ev.recovery = j;
        }
        events.push_back(ev);
      }
      i = j;
      continue;
    }
    ++i;
  }
  return events;
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace mdrlab
