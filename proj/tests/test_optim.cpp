#include <gtest/gtest.h>

#include <cmath>

#include "mdrlab/error.hpp"
#include "mdrlab/optim.hpp"

using namespace mdrlab;

TEST(Adam, ConstantGradientMovesByLearningRate) {
  // With a constant gradient the bias-corrected moments equal g and g^2, so
  // every step moves by lr * g / (|g| + eps).
  Parameter p("p", Tensor::vector({1.0, -2.0, 0.5}));
  AdamOptions o;
  o.lr = 0.01;
  Adam adam({&p}, o);
  const std::vector<double> g{0.3, -4.0, 1e-3};
  std::vector<double> expected{1.0, -2.0, 0.5};
  for (int step = 0; step < 5; ++step) {
    p.grad = Tensor::vector(g);
    adam.step();
    for (std::size_t i = 0; i < 3; ++i) {
      expected[i] -= o.lr * g[i] / (std::abs(g[i]) + o.eps);
      EXPECT_NEAR(p.value[i], expected[i], 1e-14);
    }
  }
  EXPECT_EQ(adam.state().t, 5u);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  Parameter p("p", Tensor::vector({0.7}));
  AdamOptions o;
  o.lr = 0.05;
  o.beta1 = 0.8;
  o.beta2 = 0.95;
  Adam adam({&p}, o);
  double w = 0.7, m = 0.0, v = 0.0;
  const double grads[] = {1.0, -0.5, 2.0, 0.0, -3.0};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    p.grad = Tensor::vector({g});
    adam.step();
    m = 0.8 * m + 0.2 * g;
    v = 0.95 * v + 0.05 * g * g;
    const double mh = m / (1 - std::pow(0.8, t));
    const double vh = v / (1 - std::pow(0.95, t));
    w -= 0.05 * mh / (std::sqrt(vh) + o.eps);
    EXPECT_NEAR(p.value[0], w, 1e-15);
  }
}

TEST(Adam, DecoupledWeightDecay) {
  Parameter p("p", Tensor::vector({2.0}));
  AdamOptions o;
  o.lr = 0.1;
  o.weight_decay = 0.5;
  Adam adam({&p}, o);
  p.grad = Tensor::vector({0.0});
  adam.step();
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1.0 - 0.05));
  // The moments never see the decay term.
  EXPECT_EQ(adam.state().m[0][0], 0.0);
  EXPECT_EQ(adam.state().v[0][0], 0.0);
}

TEST(Adam, RejectsNonFiniteGradientWithoutSideEffects) {
  Parameter a("a", Tensor::vector({1.0}));
  Parameter b("b", Tensor::vector({1.0}));
  Adam adam({&a, &b}, {});
  a.grad = Tensor::vector({1.0});
  b.grad.data()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam.step(), NumericError);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(adam.state().t, 0u);
}

TEST(Adam, OptionValidation) {
  Parameter p("p", Tensor::vector({1.0}));
  AdamOptions bad;
  bad.beta1 = 1.0;
  EXPECT_THROW(Adam({&p}, bad), ConfigError);
  bad = {};
  bad.eps = 0.0;
  EXPECT_THROW(Adam({&p}, bad), ConfigError);
  bad = {};
  bad.weight_decay = -1.0;
  EXPECT_THROW(Adam({&p}, bad), ConfigError);
}

TEST(ClipGrad, RescalesOnlyAboveThreshold) {
  Parameter a("a", Tensor::vector({0.0, 0.0}));
  Parameter b("b", Tensor::vector({0.0}));
  a.grad = Tensor::vector({3.0, 0.0});
  b.grad = Tensor::vector({4.0});
  std::vector<Parameter*> ps{&a, &b};
  EXPECT_DOUBLE_EQ(global_grad_norm(ps), 5.0);
  EXPECT_DOUBLE_EQ(clip_grad_global_norm(ps, 10.0), 5.0);
  EXPECT_EQ(a.grad[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_grad_global_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(ps), 1.0, 1e-15);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
  EXPECT_THROW(clip_grad_global_norm(ps, 0.0), ConfigError);
}
