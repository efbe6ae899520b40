#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mdrlab/envs.hpp"
#include "mdrlab/error.hpp"

using namespace mdrlab;

namespace {

PatchLocConfig small_patchloc() {
  PatchLocConfig c;
  c.image_size = 32;
  c.view_size = 8;
  return c;
}

class ConstantEnv final : public Environment {
 public:
  std::string id() const override { return "constant"; }
  Shape observation_shape() const override { return {3}; }
  std::size_t num_actions() const override { return 2; }
  std::vector<double> reset(std::uint64_t) override {
    t_ = 0;
    return {0.5, -1.0, 2.0};
  }
  StepResult step(std::size_t) override { return {{0.5, -1.0, 2.0}, 0.0, ++t_ >= 7, {}}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ConstantEnv>(*this); }

 private:
  std::size_t t_ = 0;
};

}  // namespace

TEST(PatchLoc, ObservationShapeAndRange) {
  PatchLocConfig c = small_patchloc();
  c.standardize = false;
  PatchLocEnv env(c);
  EXPECT_EQ(env.observation_shape(), (Shape{3, 8, 8, 3}));
  EXPECT_EQ(env.observation_blocks(), (std::vector<std::size_t>{192, 192, 192}));
  const auto obs = env.reset(1);
  ASSERT_EQ(obs.size(), 576u);
  for (double v : obs) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(PatchLoc, StandardizedFeaturesAreCentred) {
  PatchLocConfig raw_config = small_patchloc();
  raw_config.standardize = false;
  PatchLocEnv raw(raw_config), standard(small_patchloc());
  const auto a = raw.reset(5), b = standard.reset(5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(std::isfinite(b[i]));
  const FeatureStats stats = distribution_probe(standard, uniform_random_policy(), 4000, 99);
  double mean_abs = 0.0, mean_var = 0.0;
  for (std::size_t i = 0; i < stats.mean.size(); ++i) {
    mean_abs += std::abs(stats.mean[i]);
    mean_var += stats.var[i];
  }
  mean_abs /= static_cast<double>(stats.mean.size());
  mean_var /= static_cast<double>(stats.var.size());
  EXPECT_LT(mean_abs, 0.1);
  EXPECT_NEAR(mean_var, 1.0, 0.15);
}

TEST(PatchLoc, ResetIsDeterministic) {
  PatchLocEnv a(small_patchloc()), b(small_patchloc());
  EXPECT_EQ(a.reset(17), b.reset(17));
  EXPECT_EQ(a.target(), b.target());
  Rng rng(3);
  for (int t = 0; t < 15; ++t) {
    const std::size_t act = rng.below(PatchLocEnv::kConfirm);
    const StepResult ra = a.step(act), rb = b.step(act);
    EXPECT_EQ(ra.obs, rb.obs);
    EXPECT_EQ(ra.reward, rb.reward);
    if (ra.done) break;
  }
  PatchLocEnv c(small_patchloc());
  EXPECT_NE(c.reset(18), b.reset(17));
}

TEST(PatchLoc, WindowStaysInsideImage) {
  PatchLocEnv env(small_patchloc());
  Rng rng(4);
  for (std::uint64_t ep = 0; ep < 50; ++ep) {
    env.reset(ep);
    for (;;) {
      const StepResult r = env.step(rng.below(PatchLocEnv::kConfirm));
      const Window w = env.agent_window();
      EXPECT_LE(w.x + w.side, 32u);
      EXPECT_LE(w.y + w.side, 32u);
      EXPECT_GE(r.reward, -0.01);
      EXPECT_LE(r.reward, 0.99);
      if (r.done) break;
    }
    EXPECT_EQ(env.steps_taken(), env.config().budget);
  }
}

TEST(PatchLoc, OracleReachesExactTarget) {
  PatchLocEnv env(small_patchloc());
  for (std::uint64_t ep = 0; ep < 30; ++ep) {
    env.reset(ep);
    double ret = 0.0;
    StepResult r;
    do {
      r = env.step(env.oracle_action());
      ret += r.reward;
    } while (!r.done);
    EXPECT_EQ(env.agent_window(), env.target());
    EXPECT_NEAR(r.reward, 0.99, 1e-15);
    EXPECT_NEAR(ret, 1.0 - 0.01 * static_cast<double>(env.steps_taken()), 1e-12);
  }
}

TEST(PatchLoc, ConfirmRewards) {
  PatchLocEnv env(small_patchloc());
  env.reset(5);
  const Window t = env.target();
  env.set_agent(t.x, t.y, t.side == 16 ? 1 : 2);
  EXPECT_NEAR(env.step(PatchLocEnv::kConfirm).reward, 0.99, 1e-15);

  // A disjoint window earns IoU 0, leaving only the step cost.
  env.reset(5);
  const std::size_t far_x = t.x >= 16 ? 0 : 24;
  const std::size_t far_y = t.y >= 16 ? 0 : 24;
  env.set_agent(far_x, far_y, 2);
  EXPECT_NEAR(env.step(PatchLocEnv::kConfirm).reward, -0.01, 1e-15);
  EXPECT_THROW(env.step(PatchLocEnv::kUp), EnvError);
  EXPECT_THROW(env.set_agent(30, 0, 1), EnvError);
}

TEST(PatchLoc, WindowIou) {
  EXPECT_EQ(window_iou({0, 0, 8}, {0, 0, 8}), 1.0);
  EXPECT_EQ(window_iou({0, 0, 8}, {8, 0, 8}), 0.0);
  EXPECT_NEAR(window_iou({0, 0, 8}, {4, 0, 8}), 32.0 / 96.0, 1e-15);
  EXPECT_NEAR(window_iou({0, 0, 16}, {0, 0, 8}), 0.25, 1e-15);
}

TEST(PatchLoc, LevelSetLimitsImages) {
  PatchLocConfig c = small_patchloc();
  c.levels = 4;
  PatchLocEnv a(c), b(c);
  a.reset(1);
  b.reset(5);
  EXPECT_EQ(a.image(), b.image());
  b.reset(2);
  EXPECT_NE(a.image(), b.image());
}

TEST(GridGame, AlwaysRightSolvesGapFreeLevel) {
  GridGameConfig c;
  c.gap_probability = 0.0;
  GridGameEnv env(c);
  env.reset(3);
  double ret = 0.0;
  StepResult r;
  std::size_t steps = 0;
  do {
    r = env.step(GridGameEnv::kRight);
    ret += r.reward;
    ++steps;
  } while (!r.done);
  EXPECT_EQ(steps, c.length - 1);
  EXPECT_FALSE(r.info.truncated);
  EXPECT_NEAR(ret, 1.0 + c.progress_reward * static_cast<double>(c.length - 1), 1e-12);
}

TEST(GridGame, LayoutsAreSolvableAndVaried) {
  GridGameConfig c;
  std::set<std::uint64_t> hashes;
  for (std::uint64_t s = 0; s < 500; ++s) {
    const auto layout = GridGameEnv::generate_layout(c, s);
    EXPECT_EQ(layout, GridGameEnv::generate_layout(c, s));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(layout[i], 0);
    for (std::size_t i = c.length - 2; i < c.length; ++i) EXPECT_EQ(layout[i], 0);
    // No gap is wider than a jump can clear.
    std::size_t run = 0;
    for (auto cell : layout) {
      run = cell ? run + 1 : 0;
      EXPECT_LT(run, GridGameEnv::kJumpDistance);
    }
    hashes.insert(GridGameEnv::layout_hash(layout));
  }
  EXPECT_GE(hashes.size(), 495u);
}

TEST(GridGame, FallingAndTruncation) {
  GridGameConfig c;
  c.horizon = 4;
  c.gap_probability = 0.0;
  GridGameEnv env(c);
  env.reset(1);
  StepResult r;
  for (int i = 0; i < 4; ++i) r = env.step(GridGameEnv::kNoop);
  EXPECT_TRUE(r.done);
  EXPECT_TRUE(r.info.truncated);
  EXPECT_THROW(env.step(GridGameEnv::kNoop), EnvError);

  GridGameConfig g;
  g.gap_probability = 1.0;
  GridGameEnv gappy(g);
  gappy.reset(2);
  ASSERT_EQ(gappy.layout()[3], 1);
  gappy.step(GridGameEnv::kRight);
  gappy.step(GridGameEnv::kRight);
  r = gappy.step(GridGameEnv::kRight);
  EXPECT_TRUE(r.done);
  EXPECT_FALSE(r.info.truncated);
}

TEST(GridGame, LevelSets) {
  GridGameConfig c;
  c.levels = 8;
  c.level_offset = 100;
  GridGameEnv env(c);
  env.reset(3);
  EXPECT_EQ(env.level_seed(), 103u);
  env.reset(11);
  EXPECT_EQ(env.level_seed(), 103u);
}

TEST(Registry, OverridesAndErrors) {
  auto p = make_env("patchloc", {{"view", 4}, {"image", 16}});
  EXPECT_EQ(p->observation_shape(), (Shape{3, 4, 4, 3}));
  auto g = make_env("gridgame", {{"length", 10}});
  EXPECT_EQ(g->num_actions(), 4u);
  EXPECT_THROW(make_env("atari"), ConfigError);
  EXPECT_THROW(make_env("patchloc", {{"bogus", 1}}), ConfigError);
  EXPECT_THROW(make_env("patchloc", {{"image", 30}}), ConfigError);
  EXPECT_THROW(make_env("gridgame", {{"length", 2.5}}), ConfigError);
}

TEST(Probe, PolicyShiftsLocalViewDistribution) {
  // The local view of a scripted searcher differs from a random walker's;
  // this is the covariate drift BatchNorm statistics have to chase.
  PatchLocConfig c = small_patchloc();
  c.standardize = false;
  PatchLocEnv env(c);
  const std::size_t n = 10000;
  const FeatureStats random = distribution_probe(env, uniform_random_policy(), n, 1);
  const ProbePolicy oracle = [](const Environment& e, std::span<const double>, Rng&) {
    return static_cast<const PatchLocEnv&>(e).oracle_action();
  };
  const FeatureStats scripted = distribution_probe(env, oracle, n, 1);
  ASSERT_EQ(random.count, n);
  const double diff = std::abs(random.block_mean[2] - scripted.block_mean[2]);
  const double se = std::sqrt(random.block_var[2] / n + scripted.block_var[2] / n);
  EXPECT_GT(diff, 3.0 * se);
}

TEST(Probe, ConstantEnvironmentHasNoDrift) {
  ConstantEnv env;
  const FeatureStats a = distribution_probe(env, uniform_random_policy(), 500, 1);
  const ProbePolicy first = [](const Environment&, std::span<const double>, Rng&) { return std::size_t{0}; };
  const FeatureStats b = distribution_probe(env, first, 500, 2);
  EXPECT_EQ(a.mean, b.mean);
  for (double v : a.var) EXPECT_EQ(v, 0.0);
}
