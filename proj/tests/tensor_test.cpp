#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rmc/ops.hpp"
#include "rmc/optim.hpp"

using namespace rmc;

TEST(Autodiff, SumGivesOnesGradient) {
  Tensor w(Shape{2, 3, 4}, 0.5f, true);
  sum(w).backward();
  for (float g : w.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Autodiff, SquareAtThreeGivesSix) {
  Tensor w(Shape{1}, 3.0f, true);
  sum(mul(w, w)).backward();
  EXPECT_FLOAT_EQ(w.grad()[0], 6.0f);
}

TEST(Autodiff, BackwardTwiceDoublesGradient) {
  Rng rng(3);
  Tensor x = oracle::random_tensor(rng, {2, 3, 5, 5});
  Tensor w = oracle::random_tensor(rng, {4, 3, 3, 3});
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  const Tensor loss = sum(relu(conv2d(x, w, Tensor(), {1, 1}, {1, 1})));
  loss.backward();
  const std::vector<float> once(w.grad().begin(), w.grad().end());
  const std::vector<float> once_x(x.grad().begin(), x.grad().end());
  loss.backward();
  for (size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad()[i], 2 * once[i]);
  for (size_t i = 0; i < once_x.size(); ++i) EXPECT_EQ(x.grad()[i], 2 * once_x[i]);
}

TEST(Autodiff, SharedInputAccumulates) {
  Tensor a(Shape{3}, std::vector<float>{1, -2, 3}, true);
  sum(add(mul(a, a), a)).backward();
  const float want[] = {3, -3, 7};
  for (int i = 0; i < 3; ++i) EXPECT_FLOAT_EQ(a.grad()[static_cast<size_t>(i)], want[i]);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Tensor a(Shape{2}, 1.0f, true);
  Tensor y;
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    y = mul(a, a);
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, OpsAreBitDeterministic) {
  auto run = [] {
    Rng rng(11);
    Tensor x = oracle::random_tensor(rng, {2, 3, 4, 6, 6});
    Tensor w = oracle::random_tensor(rng, {5, 3, 3, 3, 3});
    w.set_requires_grad(true);
    const Tensor y = conv3d(x, w, Tensor(), {1, 2, 2}, {1, 1, 1});
    sum(y).backward();
    std::vector<float> out(y.data().begin(), y.data().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, ShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor(Shape{2, 3}), Tensor(Shape{3, 2})), ShapeError);
  EXPECT_THROW(reshape(Tensor(Shape{2, 3}), Shape{4}), ShapeError);
}

TEST(Sgd, ZeroLearningRateLeavesParameters) {
  std::vector<float> p{1, 2, 3}, g{5, -1, 2}, v(3, 0);
  sgd_step<float>(p, g, v, {0.0, 0.9, 1e-4});
  EXPECT_EQ(p, (std::vector<float>{1, 2, 3}));
}

TEST(Sgd, PlainStepIsExact) {
  std::vector<double> p{1, 2, 3}, g{0.5, -1, 2}, v(3, 0);
  sgd_step<double>(p, g, v, {0.1, 0.0, 0.0});
  EXPECT_EQ(p, (std::vector<double>{1 - 0.1 * 0.5, 2 + 0.1, 3 - 0.1 * 2}));
}

TEST(Sgd, MomentumMatchesUnrolledRecurrence) {
  const double lr = 0.05, mu = 0.9, wd = 0.01;
  std::vector<double> p{0.3, -1.2}, v(2, 0);
  const std::vector<std::vector<double>> grads{{1.0, -0.5}, {0.25, 2.0}};
  for (const auto& g : grads) sgd_step<double>(p, g, v, {lr, mu, wd});
  for (size_t i = 0; i < 2; ++i) {
    double q = i == 0 ? 0.3 : -1.2;
    const double v1 = grads[0][i] + wd * q;
    q -= lr * v1;
    const double v2 = mu * v1 + grads[1][i] + wd * q;
    q -= lr * v2;
    EXPECT_NEAR(p[i], q, 1e-15);
  }
}

TEST(Sgd, OptimizerStepsEveryParameter) {
  Tensor a(Shape{2}, 1.0f, true), b(Shape{3}, 2.0f, true);
  Sgd<float> opt({{"a", a}, {"b", b}}, {0.5, 0.0, 0.0});
  sum(add(sum(a), sum(b))).backward();
  opt.step();
  for (float x : a.data()) EXPECT_FLOAT_EQ(x, 0.5f);
  for (float x : b.data()) EXPECT_FLOAT_EQ(x, 1.5f);
  opt.zero_grad();
  for (float g : a.grad()) EXPECT_EQ(g, 0.0f);
}
