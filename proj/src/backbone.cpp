#include "rmc/backbone.hpp"

#include <iomanip>
#include <sstream>

namespace rmc {

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::R2D: return "r2d";
    case BackboneKind::R3D: return "r3d";
    case BackboneKind::RMC: return "rmc";
  }
  return "?";
}

BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "r2d" || s == "R2D") return BackboneKind::R2D;
  if (s == "r3d" || s == "R3D") return BackboneKind::R3D;
  if (s == "rmc" || s == "RMC") return BackboneKind::RMC;
  throw std::invalid_argument("unknown backbone kind '" + s + "' (expected r2d, r3d or rmc)");
}

int WidthMultiplier::apply(int channels) const {
  const int64_t scaled = static_cast<int64_t>(channels) * num;
  const int64_t q = 4 * static_cast<int64_t>(den);
  return static_cast<int>((scaled + q - 1) / q * 4);
}

WidthMultiplier WidthMultiplier::parse(const std::string& s) {
  WidthMultiplier m;
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) {
      m.num = std::stoi(s);
    } else {
      m.num = std::stoi(s.substr(0, slash));
      m.den = std::stoi(s.substr(slash + 1));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("width multiplier '" + s + "' is not of the form N or N/D");
  }
  if (m.num <= 0 || m.den <= 0) throw std::invalid_argument("width multiplier must be positive, got " + s);
  return m;
}

std::string WidthMultiplier::str() const { return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den); }

void BackboneConfig::validate() const {
  if (depth != 34 && depth != 50)
    throw std::invalid_argument("unsupported backbone " + to_string(kind) + "-" + std::to_string(depth) +
                                " (depth must be 34 or 50)");
  if (width.num <= 0 || width.den <= 0) throw std::invalid_argument("width multiplier must be positive");
  if (input_size <= 0 || input_size % 16 != 0)
    throw std::invalid_argument("input_size must be a positive multiple of 16, got " + std::to_string(input_size));
  if (clip_len <= 0) throw std::invalid_argument("clip_len must be positive");
  if (kind != BackboneKind::R2D && clip_len % 8 != 0)
    throw std::invalid_argument("clip_len must be divisible by 8 for " + to_string(kind) + ", got " +
                                std::to_string(clip_len));
  if (num_classes <= 0) throw std::invalid_argument("num_classes must be positive");
  if (tap_channels <= 0) throw std::invalid_argument("tap_channels must be positive");
  if (conv5_spatial_stride != 1 && conv5_spatial_stride != 2)
    throw std::invalid_argument("conv5_spatial_stride must be 1 or 2");
}

std::string BackboneConfig::prefix() const { return to_string(kind); }

std::vector<StageSpec> stage_table(const BackboneConfig& cfg) {
  cfg.validate();
  const bool bottleneck = cfg.depth == 50;
  const int inner[4] = {64, 128, 256, 512};
  const int repeats[4] = {3, 4, 6, 3};
  std::vector<StageSpec> out;
  for (int i = 0; i < 4; ++i) {
    StageSpec s;
    s.name = "conv" + std::to_string(i + 2) + "_x";
    s.block = bottleneck ? BlockType::Bottleneck : BlockType::Basic;
    s.inner_width = cfg.width.apply(inner[i]);
    s.out_width = bottleneck ? 4 * s.inner_width : s.inner_width;
    s.repeats = repeats[i];
    s.spatial_stride = i == 0 ? 1 : (i == 3 ? cfg.conv5_spatial_stride : 2);
    switch (cfg.kind) {
      case BackboneKind::R3D:
        s.dims = 3;
        s.temporal_stride = i == 0 ? 1 : 2;
        break;
      case BackboneKind::RMC:
        s.dims = i == 3 ? 3 : 2;
        s.temporal_stride = i == 3 ? 2 : 1;
        s.temporal_stride_each_block = i == 3;
        break;
      case BackboneKind::R2D:
        s.dims = 2;
        break;
    }
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

ConvSpec block_conv(int dims, int in, int out, int k, int spatial_stride, int temporal_stride) {
  const int pad = k / 2;
  if (dims == 2) return ConvSpec::make2d(in, out, k, spatial_stride, pad);
  return ConvSpec::make3d(in, out, {k, k, k}, {temporal_stride, spatial_stride, spatial_stride}, {pad, pad, pad});
}

}  // namespace

template <typename T>
ResidualBlock<T>::ResidualBlock(int dims, BlockType type, int in, int inner, int out, int spatial_stride,
                                int temporal_stride, Rng& rng) {
  if (dims == 2 && temporal_stride != 1) throw std::invalid_argument("2D block cannot stride in time");
  if (type == BlockType::Bottleneck) {
    branch_.emplace_back(block_conv(dims, in, inner, 1, 1, 1), rng);
    branch_.emplace_back(block_conv(dims, inner, inner, 3, spatial_stride, temporal_stride), rng);
    branch_.emplace_back(block_conv(dims, inner, out, 1, 1, 1), rng);
  } else {
    if (inner != out) throw std::invalid_argument("basic block needs inner width == out width");
    branch_.emplace_back(block_conv(dims, in, out, 3, spatial_stride, temporal_stride), rng);
    branch_.emplace_back(block_conv(dims, out, out, 3, 1, 1), rng);
  }
  if (in != out || spatial_stride != 1 || temporal_stride != 1)
    projection_.emplace(block_conv(dims, in, out, 1, spatial_stride, temporal_stride), rng);
}

template <typename T>
BasicTensor<T> ResidualBlock<T>::forward(const BasicTensor<T>& x, Mode mode) const {
  if (x.rank() < 2 || x.dim(1) != in_channels())
    throw ShapeError("residual block expects " + std::to_string(in_channels()) + " input channels, got " +
                     shape_str(x.shape()));
  BasicTensor<T> y = x;
  for (size_t i = 0; i < branch_.size(); ++i) y = branch_[i].forward(y, mode, i + 1 < branch_.size());
  BasicTensor<T> shortcut = projection_ ? projection_->forward(x, mode, false) : x;
  if (shortcut.shape() != y.shape())
    throw ShapeError("identity shortcut " + shape_str(shortcut.shape()) + " does not match residual branch " +
                     shape_str(y.shape()));
  return relu(add(y, shortcut));
}

template <typename T>
void ResidualBlock<T>::collect(const std::string& prefix, StateDict<T>& state) const {
  for (size_t i = 0; i < branch_.size(); ++i)
    branch_[i].collect(prefix + ".conv" + std::to_string(i + 1), prefix + ".bn" + std::to_string(i + 1), state);
  if (projection_) projection_->collect(prefix + ".proj", prefix + ".proj_bn", state);
}

template <typename T>
Shape ResidualBlock<T>::out_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& c : branch_) s = c.conv.spec().out_shape(s);
  return s;
}

template <typename T>
int64_t ResidualBlock<T>::macs(const Shape& in) const {
  int64_t m = 0;
  Shape s = in;
  for (const auto& c : branch_) {
    m += c.conv.spec().macs(s);
    s = c.conv.spec().out_shape(s);
  }
  if (projection_) m += projection_->conv.spec().macs(in);
  return m;
}

template <typename T>
Stage<T>::Stage(const StageSpec& spec, int in_channels, Rng& rng) : spec_(spec) {
  int in = in_channels;
  for (int b = 0; b < spec.repeats; ++b) {
    const int ss = b == 0 ? spec.spatial_stride : 1;
    const int ts = (b == 0 || spec.temporal_stride_each_block) ? spec.temporal_stride : 1;
    blocks_.emplace_back(spec.dims, spec.block, in, spec.inner_width, spec.out_width, ss, ts, rng);
    in = spec.out_width;
  }
}

template <typename T>
BasicTensor<T> Stage<T>::forward(const BasicTensor<T>& x, Mode mode) const {
  BasicTensor<T> y = x;
  for (const auto& b : blocks_) y = b.forward(y, mode);
  return y;
}

template <typename T>
void Stage<T>::collect(const std::string& prefix, StateDict<T>& state) const {
  for (size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect(prefix + "." + std::to_string(b), state);
}

template <typename T>
Shape Stage<T>::out_shape(Shape in) const {
  for (const auto& b : blocks_) in = b.out_shape(in);
  return in;
}

template <typename T>
int64_t Stage<T>::macs(Shape in) const {
  int64_t m = 0;
  for (const auto& b : blocks_) {
    m += b.macs(in);
    in = b.out_shape(in);
  }
  return m;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> fold_frames(const BasicTensor<T>& clip) {
  if (clip.rank() != 5) throw ShapeError("fold_frames expects [N,C,L,H,W], got " + shape_str(clip.shape()));
  const auto& s = clip.shape();
  return reshape(permute(clip, {0, 2, 1, 3, 4}), Shape{s[0] * s[2], s[1], s[3], s[4]});
}

template <typename T>
BasicTensor<T> unfold_frames(const BasicTensor<T>& frames, int64_t clips) {
  if (frames.rank() != 4 || clips <= 0 || frames.dim(0) % clips != 0)
    throw ShapeError("unfold_frames cannot split " + shape_str(frames.shape()) + " into " + std::to_string(clips) +
                     " clips");
  const auto& s = frames.shape();
  const int64_t L = s[0] / clips;
  return permute(reshape(frames, Shape{clips, L, s[1], s[2], s[3]}), {0, 2, 1, 3, 4});
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int stem_out = cfg_.width.apply(64);
  if (cfg_.frame_wise())
    stem_ = ConvBn<T>(ConvSpec::make2d(3, stem_out, 7, 2, 3), rng);
  else
    stem_ = ConvBn<T>(ConvSpec::make3d(3, stem_out, {3, 7, 7}, {1, 2, 2}, {1, 3, 3}), rng);
  int in = stem_out;
  auto table = stage_table(cfg_);
  for (size_t i = 0; i < table.size(); ++i) {
    if (i == 3 && cfg_.frame_wise()) {
      tap_proj_.emplace(ConvSpec::make2d(in, cfg_.scaled_tap_channels(), 1, 1, 0), rng);
      in = cfg_.scaled_tap_channels();
    }
    stages_.emplace_back(table[i], in, rng);
    in = table[i].out_width;
  }
  fc_ = Linear<T>(in, cfg_.num_classes, rng);
}

template <typename T>
int Backbone<T>::tap_channels() const {
  return tap_proj_ ? tap_proj_->conv.spec().out : stages_[2].spec().out_width;
}

template <typename T>
void Backbone<T>::check_input(const BasicTensor<T>& clip) const {
  if (clip.rank() != 5 || clip.dim(1) != 3)
    throw ShapeError("backbone expects a clip [N,3,L,S,S], got " + shape_str(clip.shape()));
  const int64_t L = clip.dim(2), H = clip.dim(3), W = clip.dim(4);
  if (H != W || H % 16 != 0)
    throw ShapeError("clip frames must be square with side divisible by 16, got " + shape_str(clip.shape()));
  if (cfg_.kind != BackboneKind::R2D && L % 8 != 0)
    throw ShapeError("clip length must be divisible by 8 for " + to_string(cfg_.kind) + ", got " + std::to_string(L));
}

template <typename T>
BasicTensor<T> Backbone<T>::tap(const BasicTensor<T>& clip, Mode mode) const {
  check_input(clip);
  if (cfg_.frame_wise()) {
    auto x = stem_.forward(fold_frames(clip), mode, true);
    x = maxpool2d(x, {3, 3}, {2, 2}, {1, 1});
    for (int i = 0; i < 3; ++i) x = stages_[static_cast<size_t>(i)].forward(x, mode);
    return tap_proj_->forward(x, mode, true);
  }
  auto x = stem_.forward(clip, mode, true);
  for (int i = 0; i < 3; ++i) x = stages_[static_cast<size_t>(i)].forward(x, mode);
  return x;
}

template <typename T>
BasicTensor<T> Backbone<T>::conv5(const BasicTensor<T>& x, Mode mode) const {
  if (x.rank() != 5) throw ShapeError("conv5_x expects a clip-shaped map [N,C,L,h,w], got " + shape_str(x.shape()));
  if (cfg_.kind == BackboneKind::R2D) return unfold_frames(stages_[3].forward(fold_frames(x), mode), x.dim(0));
  return stages_[3].forward(x, mode);
}

template <typename T>
BasicTensor<T> Backbone<T>::classify(const BasicTensor<T>& conv5_out) const {
  return fc_.forward(global_avgpool(conv5_out));
}

template <typename T>
FeatureTaps<T> Backbone<T>::forward(const BasicTensor<T>& clip, Mode mode) const {
  FeatureTaps<T> taps;
  taps.conv4_out = tap(clip, mode);
  auto x5 = cfg_.frame_wise() ? unfold_frames(taps.conv4_out, clip.dim(0)) : taps.conv4_out;
  taps.conv5_out = conv5(x5, mode);
  taps.logits = classify(taps.conv5_out);
  return taps;
}

template <typename T>
BasicTensor<T> Backbone<T>::classify_clip(const BasicTensor<T>& clip, Mode mode) const {
  return forward(clip, mode).logits;
}

template <typename T>
void Backbone<T>::collect(StateDict<T>& state) const {
  const std::string p = cfg_.prefix();
  stem_.collect(p + ".conv1", p + ".bn1", state);
  for (size_t i = 0; i < stages_.size(); ++i) {
    if (i == 3 && tap_proj_) tap_proj_->collect(p + ".tap", p + ".tap_bn", state);
    stages_[i].collect(p + "." + stages_[i].spec().name, state);
  }
  fc_.collect(p + ".fc", state);
}

template <typename T>
StateDict<T> Backbone<T>::state() const {
  StateDict<T> s;
  collect(s);
  return s;
}

namespace {

template <typename T>
int64_t convbn_params(const ConvBn<T>& c) {
  return c.conv.spec().param_count() + 2 * c.conv.spec().out;
}

template <typename T>
int64_t stage_params(const Stage<T>& stage) {
  int64_t n = 0;
  for (const auto& b : stage.blocks()) {
    for (const auto& c : b.branch()) n += convbn_params(c);
    if (b.projection()) n += convbn_params(*b.projection());
  }
  return n;
}

}  // namespace

template <typename T>
std::vector<LayerSummary> Backbone<T>::summary(int clips) const {
  const int64_t N = clips, L = cfg_.clip_len, S = cfg_.input_size;
  std::vector<LayerSummary> rows;
  Shape s;
  if (cfg_.frame_wise()) {
    s = {N * L, 3, S, S};
    const Shape conv = stem_.conv.spec().out_shape(s);
    const int64_t macs = stem_.conv.spec().macs(s);
    s = {conv[0], conv[1], (conv[2] + 2 - 3) / 2 + 1, (conv[3] + 2 - 3) / 2 + 1};
    rows.push_back({"conv1", s, convbn_params(stem_), macs});
  } else {
    s = {N, 3, L, S, S};
    const int64_t macs = stem_.conv.spec().macs(s);
    s = stem_.conv.spec().out_shape(s);
    rows.push_back({"conv1", s, convbn_params(stem_), macs});
  }
  for (size_t i = 0; i < stages_.size(); ++i) {
    if (i == 3 && tap_proj_) {
      const int64_t macs = tap_proj_->conv.spec().macs(s);
      s = tap_proj_->conv.spec().out_shape(s);
      rows.push_back({"tap", s, convbn_params(*tap_proj_), macs});
    }
    const auto& st = stages_[i];
    Shape in = s;
    if (i == 3 && cfg_.kind == BackboneKind::RMC) in = {N, s[1], L, s[2], s[3]};
    const int64_t macs = st.macs(in);
    s = st.out_shape(in);
    if (i == 3 && cfg_.kind == BackboneKind::R2D) s = {N, s[1], L, s[2], s[3]};
    rows.push_back({st.spec().name, s, stage_params(st), macs});
  }
  rows.push_back({"fc", {N, cfg_.num_classes}, fc_.param_count(), N * s[1] * cfg_.num_classes});
  return rows;
}

template <typename T>
int64_t Backbone<T>::total_macs(int clips) const {
  int64_t m = 0;
  for (const auto& r : summary(clips)) m += r.macs;
  return m;
}

std::string format_summary(const std::vector<LayerSummary>& rows) {
  std::ostringstream os;
  int64_t params = 0, macs = 0;
  for (const auto& r : rows) {
    os << std::left << std::setw(8) << r.name << " out=" << std::setw(26) << shape_str(r.out_shape)
       << " params=" << std::setw(10) << r.params << " macs=" << r.macs << '\n';
    params += r.params;
    macs += r.macs;
  }
  os << "total    params=" << params << " macs=" << macs << '\n';
  return os.str();
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Stage<float>;
template class Stage<double>;
template class Backbone<float>;
template class Backbone<double>;
template BasicTensor<float> fold_frames(const BasicTensor<float>&);
template BasicTensor<double> fold_frames(const BasicTensor<double>&);
template BasicTensor<float> unfold_frames(const BasicTensor<float>&, int64_t);
template BasicTensor<double> unfold_frames(const BasicTensor<double>&, int64_t);

}  // namespace rmc
