#pragma once

#include <optional>
#include <span>
#include <vector>

#include "rmc/backbone.hpp"
#include "rmc/crop_action.hpp"
#include "rmc/rpn.hpp"

namespace rmc {

/// Which boxes feed the action path's crop.
enum class CropSource {
  Proposal,     // track window of the top proposals
  GroundTruth,  // track window of the supplied ground-truth boxes
  FullFrame,    // the whole frame (localization ablated)
};

struct NetConfig {
  /// Shared backbone; conv5_x runs on crops, so its spatial stride is 1.
  BackboneConfig backbone{.conv5_spatial_stride = 1};
  AnchorConfig anchors;
  int crop_size = 4;
  /// Adds the proposal regression block.
  bool improved = false;
  /// false replaces the proposal crop with the full frame everywhere.
  bool localize = true;
  int reg_hidden = 1024;

  void validate() const;
};

template <typename T>
struct NetForward {
  RpnOutput<T> rpn;
  /// Top proposal per frame, frames of a clip contiguous.
  std::vector<Proposal> proposals;
  /// Boxes cropped for the action path.
  std::vector<Box> action_boxes;
  BasicTensor<T> action_logits;  // [N, act_num]
  /// Improved model only: deltas [N*L, 4] relative to the proposals.
  BasicTensor<T> reg_deltas;
  /// Final per-frame detection: refined boxes when improved, else proposals.
  std::vector<Box> detections;
};

/// Shared 2D stages, RPN on the conv4_x tap, crop pool into the 3D conv5_x
/// action head, and the optional regression block.
template <typename T>
class ActionNet {
 public:
  ActionNet(const NetConfig& cfg, uint64_t seed);

  /// clip [N,3,L,S,S]. `gt` (one box per frame) is needed only for
  /// CropSource::GroundTruth.
  NetForward<T> forward(const BasicTensor<T>& clip, Mode mode, CropSource source = CropSource::Proposal,
                        std::span<const Box> gt = {}) const;

  void collect(StateDict<T>& state) const;
  StateDict<T> state() const;
  const NetConfig& config() const { return cfg_; }
  const AnchorSet& anchors() const { return anchors_; }
  const Backbone<T>& backbone() const { return backbone_; }
  const RpnHead<T>& rpn() const { return rpn_; }
  const std::optional<RegressionBlock<T>>& regression() const { return reg_; }
  CropSpec crop_spec() const { return {cfg_.crop_size, 16.0f}; }

 private:
  NetConfig cfg_;
  Backbone<T> backbone_;
  RpnHead<T> rpn_;
  std::optional<RegressionBlock<T>> reg_;
  AnchorSet anchors_;
};

}  // namespace rmc
