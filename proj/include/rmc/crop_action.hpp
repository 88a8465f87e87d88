#pragma once

#include <span>
#include <string>
#include <vector>

#include "rmc/box.hpp"
#include "rmc/nn.hpp"

namespace rmc {

struct CropSpec {
  int output_size = 4;
  /// Pixels per feature cell of the tap.
  float stride = 16;
};

/// Bilinear crop of one box per frame. tap [N*L, C, Hf, Wf] with the frames
/// of each clip contiguous, boxes in image pixels, result [N, C, L, P, P].
/// Bin (i, j) samples at feature coordinate
///   y = y1/stride + (i + 0.5) * (y2 - y1) / stride / P - 0.5
/// (likewise x), clamped to the map. Boxes are constants.
template <typename T>
BasicTensor<T> crop_pool(const BasicTensor<T>& tap, std::span<const Box> boxes, const CropSpec& spec, int64_t clips);

/// Union of a clip's per-frame boxes, repeated once per frame.
std::vector<Box> track_window(std::span<const Box> frame_boxes, int64_t clip_len);

/// Two fully connected layers producing one box delta per frame.
template <typename T>
class RegressionBlock {
 public:
  RegressionBlock() = default;
  RegressionBlock(int in_features, int hidden, Rng& rng);

  /// crops [F, C, P, P] -> deltas [F, 4] as (t_xc, t_yc, t_h, t_w).
  BasicTensor<T> forward(const BasicTensor<T>& crops) const;
  void collect(const std::string& prefix, StateDict<T>& state) const;

  Linear<T> fc1, fc2;
};

/// lambda2 * mean over frames of sum_j smooth_l1(tr*_j - tr_j), where
/// tr = encode_box(gt, proposal). pred is [F, 4].
template <typename T>
BasicTensor<T> loss_roi_reg(const BasicTensor<T>& pred, std::span<const Box> proposals, std::span<const Box> gts,
                            T lambda2);

/// decode_box(delta, proposal) clipped to the frame.
Box refine_box(const Box& proposal, const BoxDelta& delta, float frame_w, float frame_h);

}  // namespace rmc
