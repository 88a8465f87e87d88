#include "rmc/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rmc {

AnchorConfig AnchorConfig::preset(const std::string& name) {
  AnchorConfig c;
  if (name == "default") return c;
  if (name == "micro") {
    c.scales = {8, 16, 24};
    return c;
  }
  throw std::invalid_argument("unknown anchor preset '" + name + "' (expected default or micro)");
}

AnchorSet generate_anchors(int feat_h, int feat_w, float stride, std::span<const float> scales,
                           std::span<const float> ratios) {
  if (stride <= 0) throw std::invalid_argument("anchor stride must be positive");
  if (feat_h <= 0 || feat_w <= 0 || scales.empty() || ratios.empty())
    throw std::invalid_argument("anchor grid, scales and ratios must be non-empty");
  AnchorSet set;
  set.feat_h = feat_h;
  set.feat_w = feat_w;
  set.stride = stride;
  set.num_scales = static_cast<int>(scales.size());
  set.num_ratios = static_cast<int>(ratios.size());
  set.anchors.reserve(static_cast<size_t>(feat_h) * feat_w * scales.size() * ratios.size());
  for (int row = 0; row < feat_h; ++row)
    for (int col = 0; col < feat_w; ++col) {
      const double cx = (col + 0.5) * stride, cy = (row + 0.5) * stride;
      for (float s : scales)
        for (float r : ratios) {
          const double w = s / std::sqrt(static_cast<double>(r)), h = s * std::sqrt(static_cast<double>(r));
          set.anchors.push_back({static_cast<float>(cx - 0.5 * w), static_cast<float>(cy - 0.5 * h),
                                 static_cast<float>(cx + 0.5 * w), static_cast<float>(cy + 0.5 * h)});
        }
    }
  return set;
}

AnchorAssignment assign_anchors(const AnchorSet& anchors, const Box& gt, const AssignConfig& cfg, float frame_w,
                                float frame_h, uint64_t seed) {
  AnchorAssignment out;
  out.gt = gt;
  out.labels.assign(anchors.size(), AnchorLabel::Ignore);
  if (!gt.valid()) return out;
  int64_t best = -1;
  double best_iou = -1;
  std::vector<double> overlap(anchors.size(), 0.0);
  for (size_t i = 0; i < anchors.size(); ++i) {
    const Box& a = anchors.anchors[i];
    if (!a.inside(frame_w, frame_h)) continue;
    overlap[i] = iou(a, gt);
    if (overlap[i] >= cfg.pos_iou)
      out.labels[i] = AnchorLabel::Positive;
    else if (overlap[i] < cfg.neg_iou)
      out.labels[i] = AnchorLabel::Negative;
    if (overlap[i] > best_iou) {
      best_iou = overlap[i];
      best = static_cast<int64_t>(i);
    }
  }
  if (best >= 0) out.labels[static_cast<size_t>(best)] = AnchorLabel::Positive;

  std::vector<size_t> negatives;
  for (size_t i = 0; i < out.labels.size(); ++i) {
    if (out.labels[i] == AnchorLabel::Positive) ++out.n_reg;
    if (out.labels[i] == AnchorLabel::Negative) negatives.push_back(i);
  }
  const size_t keep = static_cast<size_t>(std::max(0, cfg.max_samples - out.n_reg));
  if (negatives.size() > keep) {
    Rng rng(seed);
    for (size_t i = 0; i < keep; ++i) std::swap(negatives[i], negatives[i + rng.below(negatives.size() - i)]);
    for (size_t i = keep; i < negatives.size(); ++i) out.labels[negatives[i]] = AnchorLabel::Ignore;
    negatives.resize(keep);
  }
  out.n_cls = out.n_reg + static_cast<int>(negatives.size());
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
RpnHead<T>::RpnHead(int in_channels, int anchors_per_cell, Rng& rng)
    : conv(ConvSpec::make2d(in_channels, in_channels, 3, 1, 1, true), rng),
      cls(ConvSpec::make2d(in_channels, 2 * anchors_per_cell, 1, 1, 0, true), rng),
      reg(ConvSpec::make2d(in_channels, 4 * anchors_per_cell, 1, 1, 0, true), rng),
      anchors_(anchors_per_cell) {}

template <typename T>
RpnOutput<T> RpnHead<T>::forward(const BasicTensor<T>& tap) const {
  auto h = relu(conv.forward(tap));
  const int64_t F = h.dim(0), H = h.dim(2), W = h.dim(3), A = anchors_;
  RpnOutput<T> out;
  out.logits = permute(reshape(cls.forward(h), Shape{F, A, 2, H, W}), {0, 1, 3, 4, 2});
  out.deltas = permute(reshape(reg.forward(h), Shape{F, A, 4, H, W}), {0, 1, 3, 4, 2});
  return out;
}

template <typename T>
void RpnHead<T>::collect(const std::string& prefix, StateDict<T>& state) const {
  conv.collect(prefix + ".conv", state);
  cls.collect(prefix + ".cls", state);
  reg.collect(prefix + ".reg", state);
}

namespace {

template <typename T>
void check_head_tensor(const BasicTensor<T>& t, const AnchorSet& anchors, size_t frames, int64_t K, const char* what) {
  const Shape want{static_cast<int64_t>(frames), anchors.per_cell(), anchors.feat_h, anchors.feat_w, K};
  if (t.shape() != want)
    throw ShapeError(std::string(what) + " shape " + shape_str(t.shape()) + " does not match anchors " + shape_str(want));
}

}  // namespace

template <typename T>
BasicTensor<T> loss_rpn_cls(const BasicTensor<T>& logits, const AnchorSet& anchors,
                            std::span<const AnchorAssignment> assignments) {
  check_head_tensor(logits, anchors, assignments.size(), 2, "objectness");
  for (const auto& a : assignments)
    if (a.labels.size() != anchors.size()) throw ShapeError("assignment does not cover the anchor set");
  int64_t n_cls = 0;
  for (const auto& a : assignments) n_cls += a.n_cls;
  const T* z = logits.data().data();
  T loss = 0;
  for (size_t f = 0; f < assignments.size(); ++f) {
    const auto& labels = assignments[f].labels;
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == AnchorLabel::Ignore) continue;
      const int64_t o = head_offset(anchors, static_cast<int64_t>(f), static_cast<int64_t>(i), 0, 2);
      const T z0 = z[o], z1 = z[o + 1];
      const T mx = std::max(z0, z1);
      const T lse = mx + std::log(std::exp(z0 - mx) + std::exp(z1 - mx));
      loss += lse - (labels[i] == AnchorLabel::Positive ? z1 : z0);
    }
  }
  const T inv = n_cls > 0 ? T(1) / static_cast<T>(n_cls) : T(0);
  std::vector<AnchorAssignment> kept(assignments.begin(), assignments.end());
  auto shared = std::make_shared<std::vector<AnchorAssignment>>(std::move(kept));
  auto set = std::make_shared<AnchorSet>(anchors);
  return BasicTensor<T>::from_op(Shape{1}, {loss * inv}, {logits}, [shared, set, inv](Node<T>& self) {
    auto g = self.parent_grad(0);
    const T* z = self.parents[0]->data.data();
    const T up = self.pass_grad[0] * inv;
    for (size_t f = 0; f < shared->size(); ++f) {
      const auto& labels = (*shared)[f].labels;
      for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == AnchorLabel::Ignore) continue;
        const int64_t o = head_offset(*set, static_cast<int64_t>(f), static_cast<int64_t>(i), 0, 2);
        const T p1 = T(1) / (T(1) + std::exp(z[o] - z[o + 1]));
        const T y1 = labels[i] == AnchorLabel::Positive ? T(1) : T(0);
        g[static_cast<size_t>(o)] += up * ((T(1) - p1) - (T(1) - y1));
        g[static_cast<size_t>(o + 1)] += up * (p1 - y1);
      }
    }
  });
}

template <typename T>
BasicTensor<T> loss_rpn_reg(const BasicTensor<T>& deltas, const AnchorSet& anchors,
                            std::span<const AnchorAssignment> assignments, T lambda1) {
  check_head_tensor(deltas, anchors, assignments.size(), 4, "box deltas");
  for (const auto& a : assignments)
    if (a.labels.size() != anchors.size()) throw ShapeError("assignment does not cover the anchor set");
  int64_t n_reg = 0;
  for (const auto& a : assignments) n_reg += a.n_reg;
  // Residual (prediction - target) per positive anchor coordinate.
  std::vector<int64_t> offsets;
  std::vector<T> resid;
  const T* d = deltas.data().data();
  for (size_t f = 0; f < assignments.size(); ++f) {
    const auto& a = assignments[f];
    for (size_t i = 0; i < a.labels.size(); ++i) {
      if (a.labels[i] != AnchorLabel::Positive) continue;
      const auto target = encode_box(a.gt, anchors.anchors[i]).values();
      for (int j = 0; j < 4; ++j) {
        const int64_t o = head_offset(anchors, static_cast<int64_t>(f), static_cast<int64_t>(i), j, 4);
        offsets.push_back(o);
        resid.push_back(d[o] - static_cast<T>(target[static_cast<size_t>(j)]));
      }
    }
  }
  T loss = 0;
  for (T r : resid) loss += smooth_l1_value(r);
  const T k = n_reg > 0 ? lambda1 / static_cast<T>(n_reg) : T(0);
  auto off = std::make_shared<std::vector<int64_t>>(std::move(offsets));
  auto res = std::make_shared<std::vector<T>>(std::move(resid));
  return BasicTensor<T>::from_op(Shape{1}, {loss * k}, {deltas}, [off, res, k](Node<T>& self) {
    auto g = self.parent_grad(0);
    const T up = self.pass_grad[0] * k;
    for (size_t i = 0; i < off->size(); ++i) g[static_cast<size_t>((*off)[i])] += up * smooth_l1_grad((*res)[i]);
  });
}

double objectness_score(double background_logit, double target_logit) {
  return 1.0 / (1.0 + std::exp(background_logit - target_logit));
}

template <typename T>
Proposal select_top_proposal(const RpnOutput<T>& out, const AnchorSet& anchors, int64_t f, float frame_w,
                             float frame_h) {
  if (anchors.size() == 0) throw std::invalid_argument("select_top_proposal needs at least one anchor");
  const T* z = out.logits.data().data();
  const T* d = out.deltas.data().data();
  Proposal best;
  best.score = -1;
  for (size_t i = 0; i < anchors.size(); ++i) {
    const int64_t o = head_offset(anchors, f, static_cast<int64_t>(i), 0, 2);
    const double s = objectness_score(z[o], z[o + 1]);
    if (s > best.score) {
      best.score = s;
      best.anchor = static_cast<int64_t>(i);
    }
  }
  float v[4];
  for (int j = 0; j < 4; ++j) v[j] = static_cast<float>(d[head_offset(anchors, f, best.anchor, j, 4)]);
  best.box = clip_box(decode_box(BoxDelta::from(v), anchors.anchors[static_cast<size_t>(best.anchor)]), frame_w,
                      frame_h);
  return best;
}

void write_proposals(std::ostream& os, std::span<const FrameProposal> rows) {
  std::ostringstream line;
  for (const auto& r : rows) {
    line.str("");
    line.precision(9);
    line << r.frame_index << ' ' << r.score << ' ' << r.box.x1 << ' ' << r.box.y1 << ' ' << r.box.x2 << ' '
         << r.box.y2 << '\n';
    os << line.str();
  }
}

std::vector<FrameProposal> read_proposals(std::istream& is) {
  std::vector<FrameProposal> rows;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    std::istringstream ls(line);
    FrameProposal r;
    if (!(ls >> r.frame_index >> r.score >> r.box.x1 >> r.box.y1 >> r.box.x2 >> r.box.y2))
      throw std::runtime_error("proposal dump line " + std::to_string(n) + " is malformed");
    rows.push_back(r);
  }
  return rows;
}

#define RMC_INSTANTIATE_RPN(T)                                                                                   \
  template class RpnHead<T>;                                                                                     \
  template BasicTensor<T> loss_rpn_cls<T>(const BasicTensor<T>&, const AnchorSet&,                              \
                                          std::span<const AnchorAssignment>);                                    \
  template BasicTensor<T> loss_rpn_reg<T>(const BasicTensor<T>&, const AnchorSet&,                              \
                                          std::span<const AnchorAssignment>, T);                                 \
  template Proposal select_top_proposal<T>(const RpnOutput<T>&, const AnchorSet&, int64_t, float, float);

RMC_INSTANTIATE_RPN(float)
RMC_INSTANTIATE_RPN(double)

}  // namespace rmc
