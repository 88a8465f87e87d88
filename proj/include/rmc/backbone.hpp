#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rmc/nn.hpp"

namespace rmc {

enum class BackboneKind { R2D, R3D, RMC };
enum class BlockType { Basic, Bottleneck };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(const std::string& s);

/// One residual stage. Strides apply to the stage's first block, except that
/// `temporal_stride_each_block` repeats the temporal stride in every block.
struct StageSpec {
  std::string name;
  int dims = 2;
  BlockType block = BlockType::Bottleneck;
  int inner_width = 0;
  int out_width = 0;
  int repeats = 0;
  int spatial_stride = 1;
  int temporal_stride = 1;
  bool temporal_stride_each_block = false;
};

/// Channel shrink for desk-scale runs: channels * num / den, rounded up to a
/// multiple of 4.
struct WidthMultiplier {
  int num = 1;
  int den = 1;
  int apply(int channels) const;
  static WidthMultiplier parse(const std::string& s);
  std::string str() const;
};

struct BackboneConfig {
  BackboneKind kind = BackboneKind::RMC;
  int depth = 50;
  WidthMultiplier width{1, 8};
  int input_size = 112;
  int clip_len = 8;
  int num_classes = 6;
  /// Channels of the projected conv4_x tap at full width (R2D/RMC only).
  int tap_channels = 512;
  /// 2 for the standalone classifier; 1 when conv5_x consumes crop-pooled maps.
  int conv5_spatial_stride = 2;

  void validate() const;
  std::string prefix() const;
  bool frame_wise() const { return kind != BackboneKind::R3D; }
  int scaled_tap_channels() const { return width.apply(tap_channels); }
};

/// conv2_x .. conv5_x at the configured width.
std::vector<StageSpec> stage_table(const BackboneConfig& cfg);

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(int dims, BlockType type, int in, int inner, int out, int spatial_stride, int temporal_stride,
                Rng& rng);

  /// relu(F(x) + shortcut(x)); the shortcut is identity when shapes agree,
  /// a strided 1x1(x1) projection otherwise.
  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) const;
  void collect(const std::string& prefix, StateDict<T>& state) const;
  Shape out_shape(const Shape& in) const;
  int64_t macs(const Shape& in) const;

  int in_channels() const { return branch_.front().conv.spec().in; }
  bool has_projection() const { return projection_.has_value(); }
  std::vector<ConvBn<T>>& branch() { return branch_; }
  const std::vector<ConvBn<T>>& branch() const { return branch_; }
  std::optional<ConvBn<T>>& projection() { return projection_; }
  const std::optional<ConvBn<T>>& projection() const { return projection_; }

 private:
  std::vector<ConvBn<T>> branch_;
  std::optional<ConvBn<T>> projection_;
};

template <typename T>
class Stage {
 public:
  Stage() = default;
  Stage(const StageSpec& spec, int in_channels, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) const;
  void collect(const std::string& prefix, StateDict<T>& state) const;
  Shape out_shape(Shape in) const;
  int64_t macs(Shape in) const;
  const StageSpec& spec() const { return spec_; }
  std::vector<ResidualBlock<T>>& blocks() { return blocks_; }
  const std::vector<ResidualBlock<T>>& blocks() const { return blocks_; }

 private:
  StageSpec spec_;
  std::vector<ResidualBlock<T>> blocks_;
};

template <typename T>
struct FeatureTaps {
  /// RMC/R2D: projected per-frame map [N*L, C_tap, S/16, S/16].
  /// R3D: conv4_x output [N, C4, L/4, S/8, S/8].
  BasicTensor<T> conv4_out;
  /// Always clip-shaped [N, C5, L', h, w]; for R2D the frames are unfolded.
  BasicTensor<T> conv5_out;
  BasicTensor<T> logits;
};

struct LayerSummary {
  std::string name;
  Shape out_shape;
  int64_t params = 0;
  int64_t macs = 0;
};

/// [N,C,L,H,W] -> [N*L,C,H,W], frames of one clip kept contiguous.
template <typename T>
BasicTensor<T> fold_frames(const BasicTensor<T>& clip);
/// [N*L,C,H,W] -> [N,C,L,H,W].
template <typename T>
BasicTensor<T> unfold_frames(const BasicTensor<T>& frames, int64_t clips);

template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& cfg, uint64_t seed);

  /// Full standalone pass: clip [N,3,L,S,S] -> taps and logits.
  FeatureTaps<T> forward(const BasicTensor<T>& clip, Mode mode) const;
  /// conv1 .. conv4_x (and the tap projection for RMC/R2D).
  BasicTensor<T> tap(const BasicTensor<T>& clip, Mode mode) const;
  /// conv5_x on a clip-shaped input [N,C,L,h,w]. R2D runs it per frame.
  BasicTensor<T> conv5(const BasicTensor<T>& x, Mode mode) const;
  /// Spatiotemporal average pool then the final linear layer.
  BasicTensor<T> classify(const BasicTensor<T>& conv5_out) const;
  BasicTensor<T> classify_clip(const BasicTensor<T>& clip, Mode mode) const;

  void collect(StateDict<T>& state) const;
  StateDict<T> state() const;
  const BackboneConfig& config() const { return cfg_; }
  int tap_channels() const;

  /// Analytic per-stage shapes, parameter counts and multiply-accumulates for
  /// a batch of `clips` clips. No tensors are evaluated.
  std::vector<LayerSummary> summary(int clips = 1) const;
  int64_t total_macs(int clips = 1) const;
  Stage<T>& stage(int i) { return stages_[static_cast<size_t>(i)]; }

 private:
  void check_input(const BasicTensor<T>& clip) const;

  BackboneConfig cfg_;
  ConvBn<T> stem_;
  std::vector<Stage<T>> stages_;  // conv2_x .. conv5_x
  std::optional<ConvBn<T>> tap_proj_;
  Linear<T> fc_;
};

std::string format_summary(const std::vector<LayerSummary>& rows);

}  // namespace rmc
