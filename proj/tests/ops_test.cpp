#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rmc/ops.hpp"

using namespace rmc;

namespace {

struct Geometry {
  int stride, pad, kernel;
};

std::vector<Geometry> grid() {
  std::vector<Geometry> g;
  for (int s : {1, 2})
    for (int p : {0, 1})
      for (int k : {1, 3}) g.push_back({s, p, k});
  return g;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoopsOverGrid) {
  Rng rng(1);
  for (const auto& g : grid())
    for (bool with_bias : {false, true}) {
      const int N = 2, C = 3, H = 7, W = 6, F = 4;
      const Tensor x = oracle::random_tensor(rng, {N, C, H, W});
      const Tensor w = oracle::random_tensor(rng, {F, C, g.kernel, g.kernel});
      const Tensor b = with_bias ? oracle::random_tensor(rng, {F}) : Tensor();
      const Tensor y = conv2d(x, w, b, {g.stride, g.stride}, {g.pad, g.pad});
      const std::vector<float> xv(x.data().begin(), x.data().end()), wv(w.data().begin(), w.data().end());
      std::vector<float> bv;
      if (with_bias) bv.assign(b.data().begin(), b.data().end());
      int Lo, Ho, Wo;
      const auto want = oracle::conv3d(xv, N, C, 1, H, W, wv, F, 1, g.kernel, g.kernel, with_bias ? &bv : nullptr, 1,
                                       g.stride, g.stride, 0, g.pad, g.pad, Lo, Ho, Wo);
      ASSERT_EQ(y.shape(), (Shape{N, F, Ho, Wo}));
      for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y.data()[i], want[i], 1e-5);
    }
}

TEST(Conv3d, MatchesNestedLoopsOverGrid) {
  Rng rng(2);
  for (const auto& g : grid()) {
    const int N = 1, C = 2, L = 5, H = 6, W = 5, F = 3;
    const Tensor x = oracle::random_tensor(rng, {N, C, L, H, W});
    const Tensor w = oracle::random_tensor(rng, {F, C, g.kernel, g.kernel, g.kernel});
    const Tensor b = oracle::random_tensor(rng, {F});
    const Tensor y = conv3d(x, w, b, {g.stride, g.stride, g.stride}, {g.pad, g.pad, g.pad});
    const std::vector<float> xv(x.data().begin(), x.data().end()), wv(w.data().begin(), w.data().end()),
        bv(b.data().begin(), b.data().end());
    int Lo, Ho, Wo;
    const auto want = oracle::conv3d(xv, N, C, L, H, W, wv, F, g.kernel, g.kernel, g.kernel, &bv, g.stride, g.stride,
                                     g.stride, g.pad, g.pad, g.pad, Lo, Ho, Wo);
    ASSERT_EQ(y.shape(), (Shape{N, F, Lo, Ho, Wo}));
    for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y.data()[i], want[i], 1e-5);
  }
}

TEST(Conv3d, MixedStridesMatchNestedLoops) {
  Rng rng(3);
  const int N = 2, C = 3, L = 4, H = 8, W = 8, F = 2;
  const Tensor x = oracle::random_tensor(rng, {N, C, L, H, W});
  const Tensor w = oracle::random_tensor(rng, {F, C, 3, 1, 3});
  const Tensor y = conv3d(x, w, Tensor(), {2, 1, 2}, {1, 0, 1});
  int Lo, Ho, Wo;
  const auto want = oracle::conv3d({x.data().begin(), x.data().end()}, N, C, L, H, W, {w.data().begin(), w.data().end()},
                                   F, 3, 1, 3, nullptr, 2, 1, 2, 1, 0, 1, Lo, Ho, Wo);
  ASSERT_EQ(y.shape(), (Shape{N, F, Lo, Ho, Wo}));
  for (size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(y.data()[i], want[i], 1e-5);
}

TEST(Conv3d, UnitTemporalKernelEqualsConv2d) {
  Rng rng(4);
  const Tensor x = oracle::random_tensor(rng, {2, 3, 1, 6, 6});
  const Tensor w = oracle::random_tensor(rng, {4, 3, 1, 3, 3});
  const Tensor y3 = conv3d(x, w, Tensor(), {1, 2, 2}, {0, 1, 1});
  const Tensor y2 = conv2d(reshape(x, Shape{2, 3, 6, 6}), reshape(w, Shape{4, 3, 3, 3}), Tensor(), {2, 2}, {1, 1});
  ASSERT_EQ(y3.numel(), y2.numel());
  for (int64_t i = 0; i < y2.numel(); ++i) EXPECT_NEAR(y3.data()[i], y2.data()[i], 1e-5);
}

TEST(Pool, MaxPool2dMatchesNestedLoops) {
  Rng rng(5);
  for (int k : {2, 3})
    for (int s : {1, 2})
      for (int p : {0, 1}) {
        if (2 * p > k) continue;
        const Tensor x = oracle::random_tensor(rng, {2, 3, 7, 6});
        const Tensor y = maxpool2d(x, {k, k}, {s, s}, {p, p});
        int Lo, Ho, Wo;
        const auto want = oracle::maxpool3d({x.data().begin(), x.data().end()}, 2, 3, 1, 7, 6, 1, k, k, 1, s, s, 0, p,
                                            p, Lo, Ho, Wo);
        ASSERT_EQ(y.shape(), (Shape{2, 3, Ho, Wo}));
        for (size_t i = 0; i < want.size(); ++i) EXPECT_EQ(y.data()[i], want[i]);
      }
}

TEST(Pool, MaxPool3dMatchesNestedLoops) {
  Rng rng(6);
  for (int k : {1, 2, 3})
    for (int s : {1, 2}) {
      const Tensor x = oracle::random_tensor(rng, {1, 2, 5, 6, 6});
      const int p = k == 3 ? 1 : 0;
      const Tensor y = maxpool3d(x, {k, k, k}, {s, s, s}, {p, p, p});
      int Lo, Ho, Wo;
      const auto want =
          oracle::maxpool3d({x.data().begin(), x.data().end()}, 1, 2, 5, 6, 6, k, k, k, s, s, s, p, p, p, Lo, Ho, Wo);
      ASSERT_EQ(y.shape(), (Shape{1, 2, Lo, Ho, Wo}));
      for (size_t i = 0; i < want.size(); ++i) EXPECT_EQ(y.data()[i], want[i]);
    }
}

TEST(Pool, GlobalAverageMatchesMean) {
  Rng rng(7);
  const Tensor x = oracle::random_tensor(rng, {2, 3, 2, 4, 5});
  const Tensor y = global_avgpool(x);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int i = 0; i < 40; ++i) s += x.data()[static_cast<size_t>((n * 3 + c) * 40 + i)];
      EXPECT_NEAR(y.data()[static_cast<size_t>(n * 3 + c)], s / 40, 1e-6);
    }
}

TEST(Linear, MatchesNestedLoops) {
  Rng rng(8);
  const Tensor x = oracle::random_tensor(rng, {3, 7}), w = oracle::random_tensor(rng, {7, 5}),
               b = oracle::random_tensor(rng, {5});
  const Tensor y = linear(x, w, b);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 5; ++k) {
      double s = b.data()[static_cast<size_t>(k)];
      for (int d = 0; d < 7; ++d) s += static_cast<double>(x.data()[static_cast<size_t>(i * 7 + d)]) * w.data()[static_cast<size_t>(d * 5 + k)];
      EXPECT_NEAR(y.data()[static_cast<size_t>(i * 5 + k)], s, 1e-5);
    }
}

TEST(BatchNorm, TrainingNormalizesAndUpdatesRunningStats) {
  Rng rng(9);
  const Tensor x = oracle::random_tensor(rng, {4, 2, 3, 3}, -2, 3);
  const Tensor gamma(Shape{2}, std::vector<float>{1.5f, 0.5f}), beta(Shape{2}, std::vector<float>{0.1f, -0.2f});
  Tensor rm(Shape{2}, 0.0f), rv(Shape{2}, 1.0f);
  const Tensor y = batchnorm(x, gamma, beta, rm, rv, true);
  for (int c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    std::vector<double> vals;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) vals.push_back(x.data()[static_cast<size_t>((n * 2 + c) * 9 + i)]);
    for (double a : vals) m += a;
    m /= 36;
    for (double a : vals) v += (a - m) * (a - m);
    v /= 36;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        const size_t at = static_cast<size_t>((n * 2 + c) * 9 + i);
        const double want = gamma.data()[static_cast<size_t>(c)] * (x.data()[at] - m) / std::sqrt(v + 1e-5) +
                             beta.data()[static_cast<size_t>(c)];
        EXPECT_NEAR(y.data()[at], want, 1e-5);
      }
    EXPECT_NEAR(rm.data()[static_cast<size_t>(c)], 0.1 * m, 1e-6);
    EXPECT_NEAR(rv.data()[static_cast<size_t>(c)], 0.9 + 0.1 * v * 36 / 35, 1e-5);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  const Tensor x(Shape{1, 1, 2}, std::vector<float>{1, 3});
  const Tensor gamma(Shape{1}, 2.0f), beta(Shape{1}, 1.0f);
  Tensor rm(Shape{1}, 1.0f), rv(Shape{1}, 4.0f);
  const Tensor y = batchnorm(x, gamma, beta, rm, rv, false);
  EXPECT_NEAR(y.data()[0], 1.0, 1e-5);
  EXPECT_NEAR(y.data()[1], 1.0 + 2.0 * 2.0 / std::sqrt(4.0 + 1e-5), 1e-5);
  EXPECT_EQ(rm.data()[0], 1.0f);
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLogK) {
  const std::vector<int> two{1};
  EXPECT_NEAR(softmax_cross_entropy(Tensor(Shape{1, 2}, 0.0f), std::span<const int>(two)).item(), std::log(2.0), 1e-6);
  const std::vector<int> ten{3, 7};
  EXPECT_NEAR(softmax_cross_entropy(Tensor(Shape{2, 10}, 0.25f), std::span<const int>(ten)).item(), std::log(10.0),
              1e-6);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectIsNearZero) {
  const std::vector<int> label{2};
  const Tensor z(Shape{1, 4}, std::vector<float>{0, 0, 20, 0});
  EXPECT_LT(softmax_cross_entropy(z, std::span<const int>(label)).item(), 1e-3);
}

TEST(SoftmaxCrossEntropy, MatchesFormula) {
  Rng rng(10);
  const Tensor z = oracle::random_tensor(rng, {5, 6}, -3, 3);
  const std::vector<int> labels{0, 5, 2, 2, 4};
  double want = 0;
  for (int i = 0; i < 5; ++i) {
    double lse = 0;
    for (int k = 0; k < 6; ++k) lse += std::exp(static_cast<double>(z.data()[static_cast<size_t>(i * 6 + k)]));
    want += std::log(lse) - z.data()[static_cast<size_t>(i * 6 + labels[static_cast<size_t>(i)])];
  }
  EXPECT_NEAR(softmax_cross_entropy(z, std::span<const int>(labels)).item(), want / 5, 1e-5);
}

TEST(SmoothL1, PiecewiseDefinition) {
  const Tensor x(Shape{5}, std::vector<float>{-2.5f, -1.0f, 0.0f, 0.5f, 3.0f});
  const Tensor y = smooth_l1(x);
  for (int i = 0; i < 5; ++i) EXPECT_FLOAT_EQ(y.data()[static_cast<size_t>(i)], oracle::smooth_l1(x.data()[static_cast<size_t>(i)]));
}

TEST(Structural, PermuteMatchesIndexMap) {
  Rng rng(12);
  const Tensor a = oracle::random_tensor(rng, {2, 3, 4});
  const Tensor p = permute(a, {2, 0, 1});
  ASSERT_EQ(p.shape(), (Shape{4, 2, 3}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) EXPECT_EQ(p.data()[static_cast<size_t>((k * 2 + i) * 3 + j)], a.data()[static_cast<size_t>((i * 3 + j) * 4 + k)]);
}
