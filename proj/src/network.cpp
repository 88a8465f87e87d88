#include "rmc/network.hpp"

namespace rmc {

void NetConfig::validate() const {
  backbone.validate();
  if (backbone.kind == BackboneKind::R3D) throw std::invalid_argument("the coupled network needs a frame-wise backbone (rmc or r2d)");
  if (crop_size < 1) throw std::invalid_argument("crop_size must be at least 1");
  if (reg_hidden < 1) throw std::invalid_argument("reg_hidden must be positive");
  if (anchors.scales.empty() || anchors.ratios.empty()) throw std::invalid_argument("anchor scales and ratios must be non-empty");
}

namespace {

NetConfig checked(NetConfig cfg) {
  cfg.validate();
  return cfg;
}

}  // namespace

template <typename T>
ActionNet<T>::ActionNet(const NetConfig& cfg, uint64_t seed)
    : cfg_(checked(cfg)), backbone_(cfg_.backbone, mix_seed(seed, 0)) {
  Rng rng(mix_seed(seed, 1));
  rpn_ = RpnHead<T>(backbone_.tap_channels(), cfg_.anchors.per_cell(), rng);
  if (cfg_.improved) {
    Rng reg_rng(mix_seed(seed, 2));
    const int in = backbone_.tap_channels() * cfg_.crop_size * cfg_.crop_size;
    reg_.emplace(in, cfg_.reg_hidden, reg_rng);
  }
  const int feat = cfg_.backbone.input_size / 16;
  anchors_ = generate_anchors(feat, feat, 16.0f, cfg_.anchors.scales, cfg_.anchors.ratios);
}

template <typename T>
NetForward<T> ActionNet<T>::forward(const BasicTensor<T>& clip, Mode mode, CropSource source,
                                    std::span<const Box> gt) const {
  const int64_t N = clip.dim(0), L = clip.dim(2);
  const float S = static_cast<float>(clip.dim(3));
  if (!cfg_.localize) source = CropSource::FullFrame;
  NetForward<T> out;
  const auto tap = backbone_.tap(clip, mode);
  out.rpn = rpn_.forward(tap);
  const int64_t F = N * L;
  out.proposals.reserve(static_cast<size_t>(F));
  std::vector<Box> boxes;
  for (int64_t f = 0; f < F; ++f) {
    out.proposals.push_back(select_top_proposal(out.rpn, anchors_, f, S, S));
    boxes.push_back(out.proposals.back().box);
  }
  switch (source) {
    case CropSource::Proposal: out.action_boxes = track_window(boxes, L); break;
    case CropSource::GroundTruth:
      if (static_cast<int64_t>(gt.size()) != F) throw std::invalid_argument("ground-truth crop needs one box per frame");
      out.action_boxes = track_window(gt, L);
      break;
    case CropSource::FullFrame: out.action_boxes.assign(static_cast<size_t>(F), Box{0, 0, S, S}); break;
  }
  const auto crops = crop_pool(tap, out.action_boxes, crop_spec(), N);
  out.action_logits = backbone_.classify(backbone_.conv5(crops, mode));
  out.detections = boxes;
  if (reg_) {
    const auto frame_crops = crop_pool(tap, boxes, crop_spec(), F);  // [F, C, 1, P, P]
    out.reg_deltas = reg_->forward(frame_crops);
    const T* d = out.reg_deltas.data().data();
    for (int64_t f = 0; f < F; ++f) {
      float v[4];
      for (int j = 0; j < 4; ++j) v[j] = static_cast<float>(d[f * 4 + j]);
      out.detections[static_cast<size_t>(f)] = refine_box(boxes[static_cast<size_t>(f)], BoxDelta::from(v), S, S);
    }
  }
  return out;
}

template <typename T>
void ActionNet<T>::collect(StateDict<T>& state) const {
  backbone_.collect(state);
  rpn_.collect("rpn", state);
  if (reg_) reg_->collect("roi_reg", state);
}

template <typename T>
StateDict<T> ActionNet<T>::state() const {
  StateDict<T> s;
  collect(s);
  return s;
}

template class ActionNet<float>;
template class ActionNet<double>;

}  // namespace rmc
