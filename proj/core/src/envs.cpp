#include "mdrlab/envs.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <tuple>

#include "mdrlab/error.hpp"

namespace mdrlab {

double window_iou(const Window& a, const Window& b) {
  const auto overlap = [](std::size_t a0, std::size_t as, std::size_t b0, std::size_t bs) -> double {
    const std::size_t lo = std::max(a0, b0);
    const std::size_t hi = std::min(a0 + as, b0 + bs);
    return hi > lo ? static_cast<double>(hi - lo) : 0.0;
  };
  const double inter = overlap(a.x, a.side, b.x, b.side) * overlap(a.y, a.side, b.y, b.side);
  const double uni = static_cast<double>(a.side * a.side + b.side * b.side) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// --- PatchLocEnv ----------------------------------------------------------------------

namespace {

constexpr double kViewGamma = 1.0 / 2.2;
constexpr std::size_t kStandardizeStates = 4096;
constexpr std::uint64_t kStandardizeSeed = 0x5eed;
constexpr double kMinFeatureStd = 0.05;

struct FeatureTransform {
  std::shared_ptr<const std::vector<double>> shift;
  std::shared_ptr<const std::vector<double>> scale;
};

// Statistics depend only on the rendering geometry, so they are measured once
// per process for each geometry.
FeatureTransform standardization_for(const PatchLocConfig& config) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, double>;
  static std::mutex mutex;
  static std::map<Key, FeatureTransform> cache;
  const Key key{config.image_size, config.view_size, config.channels, config.budget, config.step_cost};
  std::lock_guard<std::mutex> lock(mutex);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  PatchLocConfig raw = config;
  raw.standardize = false;
  raw.levels = 0;
  raw.level_offset = 0;
  const FeatureStats stats = distribution_probe(PatchLocEnv(raw), uniform_random_policy(), kStandardizeStates,
                                                kStandardizeSeed);
  auto scale = std::make_shared<std::vector<double>>(stats.var.size());
  for (std::size_t i = 0; i < scale->size(); ++i) (*scale)[i] = 1.0 / std::max(std::sqrt(stats.var[i]), kMinFeatureStd);
  FeatureTransform t{std::make_shared<const std::vector<double>>(stats.mean), std::move(scale)};
  cache.emplace(key, t);
  return t;
}

std::uint64_t level_for(std::uint64_t seed, std::size_t levels, std::uint64_t offset) {
  return levels ? offset + seed % levels : seed;
}

}  // namespace

PatchLocEnv::PatchLocEnv(PatchLocConfig config) : config_(config) {
  if (config_.image_size < 8 || config_.image_size % 4 != 0) {
    throw ConfigError("patchloc: image size must be a multiple of 4 and at least 8");
  }
  if (config_.view_size == 0 || config_.channels == 0) throw ConfigError("patchloc: view and channels must be positive");
  if (config_.budget == 0) throw ConfigError("patchloc: budget must be positive");
  image_.assign(config_.image_size * config_.image_size * config_.channels, 0.0);
  if (config_.standardize) {
    const FeatureTransform t = standardization_for(config_);
    feature_shift_ = t.shift;
    feature_scale_ = t.scale;
  }
}

Shape PatchLocEnv::observation_shape() const {
  return {3, config_.view_size, config_.view_size, config_.channels};
}

std::vector<std::size_t> PatchLocEnv::observation_blocks() const {
  const std::size_t view = config_.view_size * config_.view_size * config_.channels;
  return {view, view, view};
}

Window PatchLocEnv::agent_window() const { return {x_, y_, side(zoom_)}; }

void PatchLocEnv::generate(Rng& rng) {
  const std::size_t h = config_.image_size;
  const std::size_t c = config_.channels;
  const double hd = static_cast<double>(h);
  struct Blob {
    double cx, cy, radius;
    std::vector<double> amp;
  };
  // Channels 0 and 1 carry a dominant horizontal / vertical ramp, so the mean
  // colour of a window locates it; blobs and noise are nuisance texture.
  std::vector<double> grad_x(c), grad_y(c), base(c), blob_gain(c, 1.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    base[ch] = rng.uniform(0.2, 0.5);
    grad_x[ch] = rng.uniform(-0.3, 0.3);
    grad_y[ch] = rng.uniform(-0.3, 0.3);
  }
  if (c >= 2) {
    base[0] = base[1] = 0.5;
    grad_x[0] = 0.8;
    grad_y[0] = 0.0;
    grad_x[1] = 0.0;
    grad_y[1] = 0.8;
    blob_gain[0] = blob_gain[1] = 0.25;
  }
  const std::size_t num_blobs = 6 + rng.below(6);
  std::vector<Blob> blobs(num_blobs);
  for (Blob& b : blobs) {
    b.cx = rng.uniform(0.0, hd);
    b.cy = rng.uniform(0.0, hd);
    b.radius = rng.uniform(0.05 * hd, 0.25 * hd);
    b.amp.resize(c);
    for (std::size_t ch = 0; ch < c; ++ch) b.amp[ch] = blob_gain[ch] * rng.uniform(-0.5, 0.7);
  }
  // Gaussian blobs are separable: exp(-(dx^2+dy^2)/2r^2) = gx[x] * gy[y].
  std::vector<double> gx(num_blobs * h), gy(num_blobs * h);
  for (std::size_t bi = 0; bi < num_blobs; ++bi) {
    const Blob& b = blobs[bi];
    for (std::size_t t = 0; t < h; ++t) {
      const double dx = static_cast<double>(t) - b.cx;
      const double dy = static_cast<double>(t) - b.cy;
      gx[bi * h + t] = std::exp(-(dx * dx) / (2.0 * b.radius * b.radius));
      gy[bi * h + t] = std::exp(-(dy * dy) / (2.0 * b.radius * b.radius));
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < h; ++x) {
      const double u = static_cast<double>(x) / hd - 0.5;
      const double v = static_cast<double>(y) / hd - 0.5;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double val = base[ch] + grad_x[ch] * u + grad_y[ch] * v;
        for (std::size_t bi = 0; bi < num_blobs; ++bi) val += blobs[bi].amp[ch] * gx[bi * h + x] * gy[bi * h + y];
        val += blob_gain[ch] * rng.uniform(-0.15, 0.15);
        image_[(y * h + x) * c + ch] = std::clamp(val, 0.0, 1.0);
      }
    }
  }
}

std::vector<double> PatchLocEnv::reset(std::uint64_t seed) {
  Rng image_rng(derive_seed(level_for(seed, config_.levels, config_.level_offset), Stream::kEnv, 0));
  generate(image_rng);
  Rng episode_rng(derive_seed(seed, Stream::kEnv, 1));
  const std::size_t tz = 1 + episode_rng.below(kMaxZoom);
  const std::size_t ts = side(tz);
  const std::size_t positions = (config_.image_size - ts) / stride(tz) + 1;
  target_ = Window{episode_rng.below(positions) * stride(tz), episode_rng.below(positions) * stride(tz), ts};
  x_ = 0;
  y_ = 0;
  zoom_ = 0;
  steps_ = 0;
  done_ = false;
  return observe();
}

void PatchLocEnv::set_agent(std::size_t x, std::size_t y, std::size_t zoom) {
  if (zoom > kMaxZoom) throw EnvError("patchloc: zoom out of range");
  const std::size_t s = side(zoom);
  if (x + s > config_.image_size || y + s > config_.image_size) throw EnvError("patchloc: window outside image");
  x_ = x;
  y_ = y;
  zoom_ = zoom;
}

void PatchLocEnv::render_view(const Window& w, std::span<double> out) const {
  const std::size_t v = config_.view_size;
  const std::size_t c = config_.channels;
  const std::size_t h = config_.image_size;
  for (std::size_t i = 0; i < v; ++i) {
    std::size_t r0 = w.y + i * w.side / v;
    std::size_t r1 = std::max(w.y + (i + 1) * w.side / v, r0 + 1);
    for (std::size_t j = 0; j < v; ++j) {
      std::size_t c0 = w.x + j * w.side / v;
      std::size_t c1 = std::max(w.x + (j + 1) * w.side / v, c0 + 1);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t q = c0; q < c1; ++q) acc += image_[(r * h + q) * c + ch];
        }
        acc /= static_cast<double>((r1 - r0) * (c1 - c0));
        out[(i * v + j) * c + ch] = 2.0 * std::pow(acc, kViewGamma) - 1.0;  // centred to [-1, 1]
      }
    }
  }
}

std::vector<double> PatchLocEnv::observe() const {
  const std::size_t view = config_.view_size * config_.view_size * config_.channels;
  std::vector<double> obs(3 * view);
  std::span<double> all(obs);
  render_view(target_, all.subspan(0, view));
  render_view(Window{0, 0, config_.image_size}, all.subspan(view, view));
  render_view(agent_window(), all.subspan(2 * view, view));
  if (feature_shift_) {
    for (std::size_t i = 0; i < obs.size(); ++i) obs[i] = (obs[i] - (*feature_shift_)[i]) * (*feature_scale_)[i];
  }
  return obs;
}

double PatchLocEnv::confirm_reward() const { return window_iou(agent_window(), target_); }

StepResult PatchLocEnv::step(std::size_t action) {
  if (action >= kNumActions) throw EnvError("patchloc: invalid action " + std::to_string(action));
  if (done_) throw EnvError("patchloc: step after episode end; call reset()");
  ++steps_;
  StepResult res;
  res.reward = -config_.step_cost;
  const std::size_t s = side(zoom_);
  const std::size_t st = stride(zoom_);
  const std::size_t max_pos = config_.image_size - s;
  switch (action) {
    case kUp:
      y_ = y_ >= st ? y_ - st : 0;
      break;
    case kDown:
      y_ = std::min(y_ + st, max_pos);
      break;
    case kLeft:
      x_ = x_ >= st ? x_ - st : 0;
      break;
    case kRight:
      x_ = std::min(x_ + st, max_pos);
      break;
    case kZoomIn:
      if (zoom_ < kMaxZoom) {
        x_ += s / 4;
        y_ += s / 4;
        ++zoom_;
      }
      break;
    case kZoomOut:
      if (zoom_ > 0) {
        --zoom_;
        const std::size_t ns = side(zoom_);
        const std::size_t nst = stride(zoom_);
        const auto recenter = [&](std::size_t p) {
          const std::size_t shifted = p >= s / 2 ? p - s / 2 : 0;
          const std::size_t snapped = (shifted + nst / 2) / nst * nst;
          return std::min(snapped, config_.image_size - ns);
        };
        x_ = recenter(x_);
        y_ = recenter(y_);
      }
      break;
    case kConfirm:
      res.reward += confirm_reward();
      res.done = true;
      break;
    default:
      break;
  }
  if (!res.done && steps_ >= config_.budget) {
    res.reward += confirm_reward();
    res.done = true;
  }
  done_ = res.done;
  res.obs = observe();
  return res;
}

std::size_t PatchLocEnv::oracle_action() const {
  const std::size_t tz = target_.side == side(1) ? 1 : 2;
  if (zoom_ < tz) return kZoomIn;
  if (zoom_ > tz) return kZoomOut;
  if (x_ < target_.x) return kRight;
  if (x_ > target_.x) return kLeft;
  if (y_ < target_.y) return kDown;
  if (y_ > target_.y) return kUp;
  return kConfirm;
}

// --- GridGameEnv --------------------------------------------------------------------

GridGameEnv::GridGameEnv(GridGameConfig config) : config_(config) {
  if (config_.length < 8) throw ConfigError("gridgame: length must be at least 8");
  if (config_.horizon == 0) throw ConfigError("gridgame: horizon must be positive");
  if (config_.gap_probability < 0.0 || config_.gap_probability > 1.0) {
    throw ConfigError("gridgame: gap probability must lie in [0, 1]");
  }
}

Shape GridGameEnv::observation_shape() const {
  const std::size_t cells = config_.view_behind + 1 + config_.view_ahead;
  return {cells * 3 + 3 + 1};
}

std::vector<std::uint8_t> GridGameEnv::generate_layout(const GridGameConfig& config, std::uint64_t level_seed) {
  Rng rng(derive_seed(level_seed, Stream::kEnv, 2));
  std::vector<std::uint8_t> layout(config.length, 0);
  // Safe ground at the start and before the coin; gaps of width 1-2 separated
  // by at least two ground cells so every level is solvable with jumps.
  std::size_t x = 3;
  while (x + 3 < config.length) {
    if (rng.bernoulli(config.gap_probability)) {
      const std::size_t width = 1 + rng.below(2);
      for (std::size_t i = 0; i < width; ++i) layout[x + i] = 1;
      x += width + 2;
    } else {
      ++x;
    }
  }
  return layout;
}

std::uint64_t GridGameEnv::layout_hash(std::span<const std::uint8_t> layout) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto c : layout) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> GridGameEnv::reset_level(std::uint64_t level_seed) {
  level_seed_ = level_seed;
  layout_ = generate_layout(config_, level_seed);
  x_ = 0;
  best_x_ = 0;
  vx_ = 0;
  steps_ = 0;
  done_ = false;
  return observe();
}

std::vector<double> GridGameEnv::reset(std::uint64_t seed) {
  return reset_level(level_for(seed, config_.levels, config_.level_offset));
}

StepResult GridGameEnv::step(std::size_t action) {
  if (action >= kNumActions) throw EnvError("gridgame: invalid action " + std::to_string(action));
  if (done_) throw EnvError("gridgame: step after episode end; call reset()");
  ++steps_;
  StepResult res;
  const std::size_t goal = config_.length - 1;
  std::size_t next = x_;
  switch (action) {
    case kLeft:
      next = x_ > 0 ? x_ - 1 : 0;
      vx_ = -1;
      break;
    case kRight:
      next = x_ + 1;
      vx_ = 1;
      break;
    case kJump:
      next = x_ + kJumpDistance;
      vx_ = 1;
      break;
    default:
      vx_ = 0;
      break;
  }
  next = std::min(next, goal);
  x_ = next;
  if (x_ > best_x_) {
    res.reward += config_.progress_reward * static_cast<double>(x_ - best_x_);
    best_x_ = x_;
  }
  if (x_ == goal) {
    res.reward += 1.0;
    res.done = true;
  } else if (layout_[x_] == 1) {
    res.done = true;
  } else if (steps_ >= config_.horizon) {
    res.done = true;
    res.info.truncated = true;
  }
  done_ = res.done;
  res.obs = observe();
  return res;
}

std::vector<double> GridGameEnv::observe() const {
  const std::size_t cells = config_.view_behind + 1 + config_.view_ahead;
  std::vector<double> obs(observation_size(), 0.0);
  const std::size_t goal = config_.length - 1;
  for (std::size_t i = 0; i < cells; ++i) {
    const long pos = static_cast<long>(x_) - static_cast<long>(config_.view_behind) + static_cast<long>(i);
    std::size_t kind = 0;  // ground
    if (pos < 0 || pos > static_cast<long>(goal)) {
      kind = 0;
    } else if (static_cast<std::size_t>(pos) == goal) {
      kind = 2;
    } else if (layout_[static_cast<std::size_t>(pos)] == 1) {
      kind = 1;
    }
    obs[i * 3 + kind] = 1.0;
  }
  obs[cells * 3 + static_cast<std::size_t>(vx_ + 1)] = 1.0;
  obs[cells * 3 + 3] = static_cast<double>(x_) / static_cast<double>(goal);
  return obs;
}

// --- registry ----------------------------------------------------------------------

namespace {

std::size_t as_count(const std::string& key, double v) {
  if (v < 0 || v != std::floor(v)) throw ConfigError("env override '" + key + "' must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<std::string> env_override_keys(const std::string& id) {
  if (id == "patchloc") return {"image", "view", "channels", "budget", "step_cost", "levels", "level_offset", "standardize"};
  if (id == "gridgame") {
    return {"length", "horizon", "view_ahead", "view_behind", "gap_probability", "progress_reward", "levels",
            "level_offset"};
  }
  throw ConfigError("unknown environment id '" + id + "'");
}

std::unique_ptr<Environment> make_env(const std::string& id, const EnvOverrides& overrides) {
  const auto keys = env_override_keys(id);
  for (const auto& [k, v] : overrides) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("unknown override '" + k + "' for environment '" + id + "'");
    }
  }
  const auto get = [&](const std::string& k) -> const double* {
    auto it = overrides.find(k);
    return it == overrides.end() ? nullptr : &it->second;
  };
  if (id == "patchloc") {
    PatchLocConfig c;
    if (auto* v = get("image")) c.image_size = as_count("image", *v);
    if (auto* v = get("view")) c.view_size = as_count("view", *v);
    if (auto* v = get("channels")) c.channels = as_count("channels", *v);
    if (auto* v = get("budget")) c.budget = as_count("budget", *v);
    if (auto* v = get("step_cost")) c.step_cost = *v;
    if (auto* v = get("levels")) c.levels = as_count("levels", *v);
    if (auto* v = get("level_offset")) c.level_offset = as_count("level_offset", *v);
    if (auto* v = get("standardize")) c.standardize = *v != 0.0;
    return std::make_unique<PatchLocEnv>(c);
  }
  GridGameConfig c;
  if (auto* v = get("length")) c.length = as_count("length", *v);
  if (auto* v = get("horizon")) c.horizon = as_count("horizon", *v);
  if (auto* v = get("view_ahead")) c.view_ahead = as_count("view_ahead", *v);
  if (auto* v = get("view_behind")) c.view_behind = as_count("view_behind", *v);
  if (auto* v = get("gap_probability")) c.gap_probability = *v;
  if (auto* v = get("progress_reward")) c.progress_reward = *v;
  if (auto* v = get("levels")) c.levels = as_count("levels", *v);
  if (auto* v = get("level_offset")) c.level_offset = as_count("level_offset", *v);
  return std::make_unique<GridGameEnv>(c);
}

// --- distribution probe -----------------------------------------------------------

ProbePolicy uniform_random_policy() {
  return [](const Environment& env, std::span<const double>, Rng& rng) {
    return static_cast<std::size_t>(rng.below(env.num_actions()));
  };
}

FeatureStats distribution_probe(const Environment& prototype, const ProbePolicy& policy, std::size_t num_states,
                                std::uint64_t seed) {
  auto env = prototype.clone();
  const std::size_t d = env->observation_size();
  const auto blocks = env->observation_blocks();
  FeatureStats stats;
  stats.mean.assign(d, 0.0);
  stats.var.assign(d, 0.0);
  stats.block_mean.assign(blocks.size(), 0.0);
  stats.block_var.assign(blocks.size(), 0.0);
  std::vector<double> block_m2(blocks.size(), 0.0);
  std::vector<double> m2(d, 0.0);
  Rng rng(derive_seed(seed, Stream::kAction));
  std::uint64_t episode = 0;
  std::vector<double> obs = env->reset(derive_seed(seed, Stream::kEnv, episode++));
  // Welford accumulation.
  for (std::size_t n = 1; n <= num_states; ++n) {
    const double nd = static_cast<double>(n);
    for (std::size_t j = 0; j < d; ++j) {
      const double delta = obs[j] - stats.mean[j];
      stats.mean[j] += delta / nd;
      m2[j] += delta * (obs[j] - stats.mean[j]);
    }
    std::size_t at = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      double avg = 0.0;
      for (std::size_t j = 0; j < blocks[b]; ++j) avg += obs[at + j];
      avg /= static_cast<double>(blocks[b]);
      at += blocks[b];
      const double delta = avg - stats.block_mean[b];
      stats.block_mean[b] += delta / nd;
      block_m2[b] += delta * (avg - stats.block_mean[b]);
    }
    stats.count = n;
    if (n == num_states) break;
    const std::size_t a = policy(*env, obs, rng);
    StepResult r = env->step(a);
    obs = r.done ? env->reset(derive_seed(seed, Stream::kEnv, episode++)) : std::move(r.obs);
  }
  if (stats.count > 0) {
    const double nd = static_cast<double>(stats.count);
    for (std::size_t j = 0; j < d; ++j) stats.var[j] = m2[j] / nd;
    for (std::size_t b = 0; b < blocks.size(); ++b) stats.block_var[b] = block_m2[b] / nd;
  }
  return stats;
}

}  // namespace mdrlab
