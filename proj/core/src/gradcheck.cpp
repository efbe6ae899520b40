#include "mdrlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mdrlab/agent.hpp"
#include "mdrlab/autograd.hpp"
#include "mdrlab/train.hpp"

namespace mdrlab {

namespace {

double loss_value(ActorCritic& net, const BufferState& buffers, const Minibatch& batch, const PpoConfig& cfg,
                  Mode mode) {
  net.restore_buffers(buffers);
  Tape tape;
  return ppo_loss(tape, batch, net, cfg, mode).total.value().item();
}

GradcheckCase check_network(ActorCritic& net, const Minibatch& batch, const PpoConfig& cfg, Mode mode,
                            const GradcheckOptions& opt, Rng& rng, std::string name) {
  GradcheckCase out;
  out.name = std::move(name);
  const BufferState buffers = net.buffers();

  net.restore_buffers(buffers);
  for (Parameter* p : net.parameters()) p->zero_grad();
  {
    Tape tape;
    LossResult loss = ppo_loss(tape, batch, net, cfg, mode);
    tape.backward(loss.total);
  }

  for (Parameter* p : net.parameters()) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > opt.coords_per_parameter) {
      rng.shuffle(coords.begin(), coords.end());
      coords.resize(opt.coords_per_parameter);
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + opt.step;
      const double plus = loss_value(net, buffers, batch, cfg, mode);
      p->value[i] = saved - opt.step;
      const double minus = loss_value(net, buffers, batch, cfg, mode);
      p->value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double analytic = p->grad[i];
      const double abs_err = std::abs(analytic - numeric);
      const double scale = std::max(std::abs(analytic), std::abs(numeric));
      const double rel_err = scale > 0.0 ? abs_err / scale : 0.0;
      ++out.coordinates;
      out.max_abs_error = std::max(out.max_abs_error, abs_err);
      if (abs_err > opt.abs_tol) out.max_rel_error = std::max(out.max_rel_error, rel_err);
      if (abs_err > opt.abs_tol && rel_err > opt.rel_tol) ++out.failures;
    }
  }
  net.restore_buffers(buffers);
  return out;
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck(const GradcheckOptions& opt) {
  std::vector<GradcheckCase> cases;
  Rng rng(derive_seed(opt.seed, Stream::kDiagnostics, 0x67726164));
  for (std::size_t t = 0; t < opt.networks; ++t) {
    NetworkSpec spec;
    spec.input_dim = 2 + rng.below(4);
    spec.num_actions = 2 + rng.below(3);
    spec.hidden.assign(1 + rng.below(2), 0);
    for (auto& w : spec.hidden) w = 2 + rng.below(4);
    spec.batchnorm = (t % 4 == 1) || (t % 4 == 3);
    spec.dropout = (t % 4 == 2) || (t % 4 == 3);
    spec.dropout_rate = 0.2;
    spec.bn_momentum = 0.1;
    // A larger head scale gives non-trivial policy gradients.
    spec.actor_head_scale = 0.5;
    ActorCritic net(spec, derive_seed(opt.seed, Stream::kInit, t));

    const std::size_t m = 4 + rng.below(5);
    Minibatch batch;
    batch.obs = Tensor(Shape{m, spec.input_dim});
    for (std::size_t i = 0; i < batch.obs.size(); ++i) batch.obs[i] = rng.normal();
    for (std::size_t i = 0; i < m; ++i) {
      batch.actions.push_back(rng.below(spec.num_actions));
      batch.advantages.push_back(rng.normal());
      batch.targets.push_back(rng.normal());
    }

    PpoConfig cfg;
    cfg.clip_eps = 0.2;
    cfg.value_coef = 0.5 + rng.uniform();
    cfg.entropy_coef = 0.01;

    std::vector<Mode> modes{Mode::Train};
    if (net.has_mode_dependent_layers()) modes.push_back(Mode::Eval);
    for (Mode mode : modes) {
      // log_prob_old keeps every ratio well inside or well outside the clip
      // band, away from the kinks at 1 +/- eps.
      const BufferState buffers = net.buffers();
      const PolicyEvaluation ev = net.evaluate(batch.obs, mode);
      net.restore_buffers(buffers);
      batch.log_prob_old.clear();
      for (std::size_t i = 0; i < m; ++i) {
        const double shift = (i % 3 == 2) ? (rng.bernoulli(0.5) ? 0.6 : -0.6) : rng.uniform(-0.1, 0.1);
        batch.log_prob_old.push_back(log_prob(ev.dists[i], batch.actions[i]) - shift);
      }
      std::string name = "net" + std::to_string(t) + (spec.batchnorm ? "+bn" : "") + (spec.dropout ? "+dropout" : "") +
                         "/" + std::string(to_string(mode));
      cases.push_back(check_network(net, batch, cfg, mode, opt, rng, std::move(name)));
    }
  }
  return cases;
}

}  // namespace mdrlab
