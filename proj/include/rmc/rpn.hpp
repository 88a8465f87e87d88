#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rmc/box.hpp"
#include "rmc/nn.hpp"

namespace rmc {

struct AnchorConfig {
  std::vector<float> scales{16, 32, 64};
  std::vector<float> ratios{0.5f, 1.0f, 2.0f};

  int per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
  /// "default" ({16,32,64}) or "micro" ({8,16,24}); ratios {0.5,1,2}.
  static AnchorConfig preset(const std::string& name);
};

/// Anchors tiled over a feature grid. Index (row*W + col)*A + a with
/// a = scale_index * num_ratios + ratio_index.
struct AnchorSet {
  std::vector<Box> anchors;
  int feat_h = 0;
  int feat_w = 0;
  float stride = 0;
  int num_scales = 0;
  int num_ratios = 0;

  int per_cell() const { return num_scales * num_ratios; }
  size_t size() const { return anchors.size(); }
};

/// An anchor of scale s and ratio r (height / width) is s/sqrt(r) wide and
/// s*sqrt(r) tall, centered at ((col+0.5)*stride, (row+0.5)*stride).
AnchorSet generate_anchors(int feat_h, int feat_w, float stride, std::span<const float> scales,
                           std::span<const float> ratios);

enum class AnchorLabel : signed char { Ignore = -1, Negative = 0, Positive = 1 };

struct AssignConfig {
  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int max_samples = 256;
};

struct AnchorAssignment {
  std::vector<AnchorLabel> labels;
  Box gt;
  int n_cls = 0;
  int n_reg = 0;
};

/// Labels anchors against the single ground-truth box of a frame. Anchors
/// crossing the frame are ignored; the best-overlapping valid anchor is
/// always positive; negatives are subsampled under `seed`.
AnchorAssignment assign_anchors(const AnchorSet& anchors, const Box& gt, const AssignConfig& cfg, float frame_w,
                                float frame_h, uint64_t seed);

template <typename T>
struct RpnOutput {
  BasicTensor<T> logits;  // [F, A, H, W, 2], channel 1 is the target class
  BasicTensor<T> deltas;  // [F, A, H, W, 4] as (t_xc, t_yc, t_h, t_w)
};

/// Shared 3x3 convolution with relu feeding sibling 1x1 objectness and box
/// regressors.
template <typename T>
class RpnHead {
 public:
  RpnHead() = default;
  RpnHead(int in_channels, int anchors_per_cell, Rng& rng);

  RpnOutput<T> forward(const BasicTensor<T>& tap) const;
  void collect(const std::string& prefix, StateDict<T>& state) const;
  int anchors_per_cell() const { return anchors_; }

  Conv<T> conv, cls, reg;

 private:
  int anchors_ = 0;
};

/// Offset of anchor `index` of frame `f` in a [F,A,H,W,K] head tensor.
inline int64_t head_offset(const AnchorSet& set, int64_t f, int64_t index, int64_t k, int64_t K) {
  const int64_t A = set.per_cell(), W = set.feat_w, H = set.feat_h;
  const int64_t cell = index / A, a = index % A;
  return (((f * A + a) * H + cell / W) * W + cell % W) * K + k;
}

/// Two-way softmax cross-entropy summed over every frame's non-ignored
/// anchors and divided by the total N_cls. Zero when no anchor is labelled.
template <typename T>
BasicTensor<T> loss_rpn_cls(const BasicTensor<T>& logits, const AnchorSet& anchors,
                            std::span<const AnchorAssignment> assignments);

/// lambda1 * sum over positive anchors of sum_j smooth_l1(t_j - t*_j),
/// divided by the total N_reg. Zero when there are no positives.
template <typename T>
BasicTensor<T> loss_rpn_reg(const BasicTensor<T>& deltas, const AnchorSet& anchors,
                            std::span<const AnchorAssignment> assignments, T lambda1);

struct Proposal {
  Box box;
  double score = 0;
  int64_t anchor = 0;
};

/// Softmax target probability of one anchor.
double objectness_score(double background_logit, double target_logit);

/// Highest-scoring anchor of frame `f` (lowest index on ties), decoded and
/// clipped to the frame.
template <typename T>
Proposal select_top_proposal(const RpnOutput<T>& out, const AnchorSet& anchors, int64_t f, float frame_w,
                             float frame_h);

struct FrameProposal {
  int64_t frame_index = 0;
  double score = 0;
  Box box;
};

/// One line per frame: "frame_index score x1 y1 x2 y2".
void write_proposals(std::ostream& os, std::span<const FrameProposal> rows);
std::vector<FrameProposal> read_proposals(std::istream& is);

}  // namespace rmc
