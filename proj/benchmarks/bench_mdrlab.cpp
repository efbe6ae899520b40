#include <benchmark/benchmark.h>

#include "mdrlab/diagnostics.hpp"
#include "mdrlab/train.hpp"

using namespace mdrlab;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

NetworkSpec spec_for(const Environment& env, bool bn) {
  NetworkSpec s;
  s.input_dim = env.observation_size();
  s.num_actions = env.num_actions();
  s.batchnorm = bn;
  return s;
}

}  // namespace

// x W^T for a [m, k] batch against a [n, k] weight, the Linear forward.
void BM_MatmulBt(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const std::size_t n = 64;
  const Tensor x = random_tensor({m, k}, 1);
  const Tensor w = random_tensor({n, k}, 2);
  for (auto _ : state) {
    Tape t;
    benchmark::DoNotOptimize(matmul_bt(t.constant(x), t.constant(w)).value().data().data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * k));
}
BENCHMARK(BM_MatmulBt)->Args({1, 576})->Args({128, 576})->Args({128, 64});

void BM_BatchNormForwardBackward(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  BatchNormLayer bn(64, 0.1);
  Parameter x("x", random_tensor({m, 64}, 3));
  for (auto _ : state) {
    Tape t;
    t.backward(sum(bn.forward(t, t.leaf(x), Mode::Train).y));
  }
}
BENCHMARK(BM_BatchNormForwardBackward)->Arg(32)->Arg(128);

// One PPO minibatch update: forward, loss, backward, clip, Adam.
void BM_PpoUpdate(benchmark::State& state) {
  const bool bn = state.range(0) != 0;
  auto env = make_env("patchloc", {{"view", 8}});
  ActorCritic net(spec_for(*env, bn), 1);
  EnvPool pool(*env, 4, 1);
  RolloutBuffer buf = collect(pool, net, 32);
  recompute_targets(buf, net, 0.99, 0.95, true);
  PpoConfig cfg;
  cfg.minibatch = 128;
  Adam adam(net.parameters(), {});
  Rng rng(1);
  for (auto _ : state) train_step(buf, net, cfg, MdrSchedule::plain(1), adam, rng);
}
BENCHMARK(BM_PpoUpdate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_PolicyMismatch(benchmark::State& state) {
  auto env = make_env("patchloc", {{"view", 8}});
  ActorCritic net(spec_for(*env, true), 1);
  EnvPool pool(*env, 4, 1);
  const RolloutBuffer buf = collect(pool, net, 128);
  for (auto _ : state) benchmark::DoNotOptimize(policy_mismatch(buf, net, 128, 1).mean);
}
BENCHMARK(BM_PolicyMismatch)->Unit(benchmark::kMillisecond);

void BM_EnvStep(benchmark::State& state) {
  auto env = make_env(state.range(0) == 0 ? "patchloc" : "gridgame", {});
  Rng rng(1);
  std::uint64_t episode = 0;
  env->reset(episode);
  for (auto _ : state) {
    const StepResult r = env->step(rng.below(env->num_actions()));
    if (r.done) env->reset(++episode);
    benchmark::DoNotOptimize(r.obs.data());
  }
  state.SetLabel(env->id());
}
BENCHMARK(BM_EnvStep)->Arg(0)->Arg(1);

void BM_EnvReset(benchmark::State& state) {
  auto env = make_env("patchloc", {});
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(env->reset(seed++).data());
}
BENCHMARK(BM_EnvReset);
BENCHMARK_MAIN();
