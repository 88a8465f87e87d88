#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rmc/crop_action.hpp"

using namespace rmc;

TEST(CropPool, MatchesBilinearSampling) {
  Rng rng(41);
  const int clips = 2, L = 3, C = 4, H = 7, W = 7, P = 4;
  const Tensor tap = oracle::random_tensor(rng, {clips * L, C, H, W});
  std::vector<Box> boxes;
  for (int f = 0; f < clips * L; ++f) {
    const double x = rng.uniform(-10, 80), y = rng.uniform(-10, 80);
    boxes.push_back({float(x), float(y), float(x + rng.uniform(4, 60)), float(y + rng.uniform(4, 60))});
  }
  const Tensor out = crop_pool(tap, std::span<const Box>(boxes), CropSpec{P, 16}, clips);
  ASSERT_EQ(out.shape(), (Shape{clips, C, L, P, P}));
  for (int n = 0; n < clips; ++n)
    for (int c = 0; c < C; ++c)
      for (int l = 0; l < L; ++l) {
        const int f = n * L + l;
        const Box& b = boxes[static_cast<size_t>(f)];
        const float* m = tap.data().data() + (f * C + c) * H * W;
        for (int i = 0; i < P; ++i)
          for (int j = 0; j < P; ++j) {
            const double y = b.y1 / 16.0 + (i + 0.5) * (b.y2 - b.y1) / 16.0 / P - 0.5;
            const double x = b.x1 / 16.0 + (j + 0.5) * (b.x2 - b.x1) / 16.0 / P - 0.5;
            const size_t at = static_cast<size_t>((((n * C + c) * L + l) * P + i) * P + j);
            EXPECT_NEAR(out.data()[at], oracle::bilinear(m, H, W, y, x), 1e-5);
          }
      }
}

TEST(CropPool, FullFrameOfConstantMapIsConstant) {
  const Tensor tap(Shape{2, 3, 7, 7}, 2.5f);
  const std::vector<Box> boxes(2, Box{0, 0, 112, 112});
  const Tensor out = crop_pool(tap, std::span<const Box>(boxes), CropSpec{4, 16}, 1);
  for (float v : out.data()) EXPECT_FLOAT_EQ(v, 2.5f);
}

TEST(CropPool, FullScaleShape) {
  const Tensor tap(Shape{16, 512, 14, 14}, 1.0f);
  const std::vector<Box> boxes(16, Box{20, 30, 150, 200});
  EXPECT_EQ(crop_pool(tap, std::span<const Box>(boxes), CropSpec{7, 16}, 1).shape(), (Shape{1, 512, 16, 7, 7}));
}

TEST(CropPool, RejectsMismatchedBoxes) {
  const Tensor tap(Shape{4, 2, 7, 7});
  const std::vector<Box> boxes(3, Box{0, 0, 10, 10});
  EXPECT_THROW(crop_pool(tap, std::span<const Box>(boxes), CropSpec{}, 1), ShapeError);
}

TEST(TrackWindow, UnionPerClip) {
  const std::vector<Box> boxes{{0, 0, 5, 5}, {3, 2, 9, 7}, {10, 10, 20, 20}, {12, 8, 15, 30}};
  const auto w = track_window(boxes, 2);
  EXPECT_EQ(w[0], (Box{0, 0, 9, 7}));
  EXPECT_EQ(w[1], (Box{0, 0, 9, 7}));
  EXPECT_EQ(w[2], (Box{10, 8, 20, 30}));
  EXPECT_EQ(w[3], (Box{10, 8, 20, 30}));
  EXPECT_THROW(track_window(boxes, 3), std::invalid_argument);
}

TEST(RoiLoss, AllUnitResidualsGiveTwo) {
  const std::vector<Box> props{{10, 10, 40, 50}}, gts{{12, 8, 44, 47}};
  const auto t = encode_box(gts[0], props[0]).values();
  Tensor pred(Shape{1, 4});
  for (int j = 0; j < 4; ++j) pred.data()[static_cast<size_t>(j)] = t[static_cast<size_t>(j)] + 1.0f;
  EXPECT_NEAR(loss_roi_reg(pred, std::span<const Box>(props), std::span<const Box>(gts), 1.0f).item(), 2.0, 1e-6);
}

TEST(RoiLoss, ExactTargetsGiveZero) {
  const std::vector<Box> props{{10, 10, 40, 50}, {0, 5, 20, 30}}, gts{{12, 8, 44, 47}, {1, 1, 30, 33}};
  Tensor pred(Shape{2, 4});
  for (size_t f = 0; f < 2; ++f) {
    const auto t = encode_box(gts[f], props[f]).values();
    for (size_t j = 0; j < 4; ++j) pred.data()[f * 4 + j] = t[j];
  }
  EXPECT_NEAR(loss_roi_reg(pred, std::span<const Box>(props), std::span<const Box>(gts), 1.0f).item(), 0.0, 1e-7);
}

TEST(RoiLoss, MultiFrameMatchesSummation) {
  Rng rng(42);
  std::vector<Box> props, gts;
  for (int f = 0; f < 6; ++f) {
    const double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
    props.push_back({float(x), float(y), float(x + rng.uniform(8, 40)), float(y + rng.uniform(8, 40))});
    gts.push_back({float(x + rng.uniform(-4, 4)), float(y + rng.uniform(-4, 4)), float(x + rng.uniform(10, 40)),
                   float(y + rng.uniform(10, 40))});
  }
  const Tensor pred = oracle::random_tensor(rng, {6, 4}, -2, 2);
  double want = 0;
  for (size_t f = 0; f < 6; ++f) {
    const auto t = encode_box(gts[f], props[f]).values();
    for (size_t j = 0; j < 4; ++j) want += oracle::smooth_l1(pred.data()[f * 4 + j] - t[j]);
  }
  EXPECT_NEAR(loss_roi_reg(pred, std::span<const Box>(props), std::span<const Box>(gts), 0.5f).item(), 0.5 * want / 6,
              1e-5);
}

TEST(RegressionBlock, ZeroWeightsLeaveProposal) {
  Rng rng(43);
  RegressionBlock<float> block(4 * 4 * 4, 16, rng);
  for (auto* t : {&block.fc1.weight, &block.fc1.bias, &block.fc2.weight, &block.fc2.bias})
    for (auto& v : t->data()) v = 0;
  const Tensor crops = oracle::random_tensor(rng, {3, 4, 4, 4});
  const Tensor d = block.forward(crops);
  ASSERT_EQ(d.shape(), (Shape{3, 4}));
  const Box proposal{10, 12, 50, 60};
  const Box refined = refine_box(proposal, BoxDelta::from(d.data().data()), 112, 112);
  EXPECT_EQ(refined, proposal);
}
