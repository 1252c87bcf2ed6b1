#include <gtest/gtest.h>

#include <cmath>

#include "riskrank/autograd.hpp"
#include "riskrank/optim.hpp"

using namespace riskrank;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter p("p", Tensor({3}, {1.0, -2.0, 0.5}));
  OptimizerState st = OptimizerState::create({&p}, 0.01);
  adam_step({&p}, st);
  EXPECT_DOUBLE_EQ(p.value.at(0), 1.0);
  EXPECT_DOUBLE_EQ(p.value.at(1), -2.0);
  EXPECT_DOUBLE_EQ(p.value.at(2), 0.5);
  EXPECT_EQ(st.step, 1);
}

// First step from fresh state: m_hat = g, v_hat = g^2, so the update is
// -lr * g / (|g| + eps), a signed step of magnitude ~lr.
TEST(Adam, FirstStepClosedForm) {
  Parameter p("p", Tensor({2}, {0.0, 0.0}));
  p.grad = Tensor({2}, {0.3, -2.0});
  OptimizerState st = OptimizerState::create({&p}, 0.01);
  adam_step({&p}, st);
  const double expected0 = -0.01 * 0.3 / (std::fabs(0.3) + st.epsilon);
  const double expected1 = -0.01 * (-2.0) / (std::fabs(-2.0) + st.epsilon);
  EXPECT_NEAR(p.value.at(0), expected0, 1e-12);
  EXPECT_NEAR(p.value.at(1), expected1, 1e-12);
  EXPECT_NEAR(p.value.at(0), -0.01, 1e-6);
  EXPECT_NEAR(p.value.at(1), 0.01, 1e-6);
}

// Independent reference implementation of the update rule, run side by side.
TEST(Adam, HundredStepsOnQuadraticMatchesReference) {
  Parameter p("w", Tensor({1}, {1.0}));
  OptimizerState st = OptimizerState::create({&p}, 0.01);

  double w_ref = 1.0, m_ref = 0.0, v_ref = 0.0;
  const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  for (int t = 1; t <= 100; ++t) {
    {
      Graph g;
      Var w = g.param(p);
      g.backward(mul(w, w));
    }
    adam_step({&p}, st);

    const double g_ref = 2.0 * w_ref;
    m_ref = b1 * m_ref + (1 - b1) * g_ref;
    v_ref = b2 * v_ref + (1 - b2) * g_ref * g_ref;
    const double mh = m_ref / (1 - std::pow(b1, t));
    const double vh = v_ref / (1 - std::pow(b2, t));
    w_ref -= lr * mh / (std::sqrt(vh) + eps);

    EXPECT_NEAR(p.value.at(0), w_ref, 1e-12);
    p.zero_grad();
  }
  EXPECT_LT(std::fabs(p.value.at(0)), 0.5);
}

TEST(Adam, ShapeMismatchRejected) {
  Parameter p("p", Tensor({2}, {0.0, 0.0}));
  OptimizerState st = OptimizerState::create({&p});
  Parameter q("q", Tensor({3}, {0.0, 0.0, 0.0}));
  EXPECT_THROW(adam_step({&q}, st), numeric_error);
}

TEST(ClipGlobalNorm, ScalesDownOnlyWhenAboveThreshold) {
  Parameter p("p", Tensor({2}, {0.0, 0.0}));
  p.grad = Tensor({2}, {3.0, 4.0});
  double norm = clip_global_norm({&p}, 10.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_DOUBLE_EQ(p.grad.at(0), 3.0);

  norm = clip_global_norm({&p}, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(p.grad.at(0), 0.6, 1e-12);
  EXPECT_NEAR(p.grad.at(1), 0.8, 1e-12);
}
