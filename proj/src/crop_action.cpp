#include "rmc/crop_action.hpp"

#include <algorithm>
#include <cmath>

namespace rmc {

namespace {

struct Tap {
  int64_t lo, hi;
  float w;
};

// Bilinear taps along one axis for P bins of a box edge pair.
std::vector<Tap> axis_taps(float a, float b, float stride, int P, int64_t extent) {
  std::vector<Tap> t(static_cast<size_t>(P));
  const double lo = a / stride, len = (b - a) / stride;
  for (int i = 0; i < P; ++i) {
    double c = lo + (i + 0.5) * len / P - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(extent - 1));
    const int64_t f = static_cast<int64_t>(std::floor(c));
    t[static_cast<size_t>(i)] = {f, std::min(f + 1, extent - 1), static_cast<float>(c - static_cast<double>(f))};
  }
  return t;
}

}  // namespace

template <typename T>
BasicTensor<T> crop_pool(const BasicTensor<T>& tap, std::span<const Box> boxes, const CropSpec& spec,
                         int64_t clips) {
  if (tap.rank() != 4) throw ShapeError("crop_pool expects a tap [N*L,C,H,W], got " + shape_str(tap.shape()));
  const int64_t F = tap.dim(0), C = tap.dim(1), H = tap.dim(2), W = tap.dim(3);
  const int P = spec.output_size;
  if (P < 1) throw std::invalid_argument("crop size must be at least 1");
  if (clips <= 0 || F % clips != 0) throw ShapeError("crop_pool: " + std::to_string(F) + " frames do not split into " + std::to_string(clips) + " clips");
  if (static_cast<int64_t>(boxes.size()) != F)
    throw ShapeError("crop_pool: " + std::to_string(boxes.size()) + " boxes for " + std::to_string(F) + " frames");
  const int64_t L = F / clips;
  auto ty = std::make_shared<std::vector<Tap>>();
  auto tx = std::make_shared<std::vector<Tap>>();
  for (const Box& b : boxes) {
    auto y = axis_taps(b.y1, b.y2, spec.stride, P, H);
    auto x = axis_taps(b.x1, b.x2, spec.stride, P, W);
    ty->insert(ty->end(), y.begin(), y.end());
    tx->insert(tx->end(), x.begin(), x.end());
  }
  // Output [N, C, L, P, P]; frame f = n*L + l.
  const T* in = tap.data().data();
  std::vector<T> out(static_cast<size_t>(F * C * P * P));
  auto out_index = [=](int64_t f, int64_t c) { return (((f / L) * C + c) * L + f % L) * P * P; };
  for (int64_t f = 0; f < F; ++f)
    for (int64_t c = 0; c < C; ++c) {
      const T* m = in + (f * C + c) * H * W;
      T* o = out.data() + out_index(f, c);
      for (int i = 0; i < P; ++i) {
        const Tap& a = (*ty)[static_cast<size_t>(f * P + i)];
        for (int j = 0; j < P; ++j) {
          const Tap& b = (*tx)[static_cast<size_t>(f * P + j)];
          const T top = m[a.lo * W + b.lo] * (1 - b.w) + m[a.lo * W + b.hi] * b.w;
          const T bot = m[a.hi * W + b.lo] * (1 - b.w) + m[a.hi * W + b.hi] * b.w;
          o[i * P + j] = top * (1 - a.w) + bot * a.w;
        }
      }
    }
  return BasicTensor<T>::from_op(Shape{clips, C, L, P, P}, std::move(out), {tap},
                                 [ty, tx, F, C, H, W, L, P, out_index](Node<T>& self) {
                                   auto g = self.parent_grad(0);
                                   for (int64_t f = 0; f < F; ++f)
                                     for (int64_t c = 0; c < C; ++c) {
                                       T* m = g.data() + (f * C + c) * H * W;
                                       const T* o = self.pass_grad.data() + out_index(f, c);
                                       for (int i = 0; i < P; ++i) {
                                         const Tap& a = (*ty)[static_cast<size_t>(f * P + i)];
                                         for (int j = 0; j < P; ++j) {
                                           const Tap& b = (*tx)[static_cast<size_t>(f * P + j)];
                                           const T v = o[i * P + j];
                                           m[a.lo * W + b.lo] += v * (1 - a.w) * (1 - b.w);
                                           m[a.lo * W + b.hi] += v * (1 - a.w) * b.w;
                                           m[a.hi * W + b.lo] += v * a.w * (1 - b.w);
                                           m[a.hi * W + b.hi] += v * a.w * b.w;
                                         }
                                       }
                                     }
                                 });
}

std::vector<Box> track_window(std::span<const Box> frame_boxes, int64_t clip_len) {
  if (clip_len <= 0 || frame_boxes.size() % static_cast<size_t>(clip_len) != 0)
    throw std::invalid_argument("track_window: box count is not a multiple of the clip length");
  std::vector<Box> out(frame_boxes.size());
  for (size_t s = 0; s < frame_boxes.size(); s += static_cast<size_t>(clip_len)) {
    const Box u = union_box(frame_boxes.data() + s, static_cast<size_t>(clip_len));
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(s), out.begin() + static_cast<std::ptrdiff_t>(s) + clip_len, u);
  }
  return out;
}

template <typename T>
RegressionBlock<T>::RegressionBlock(int in_features, int hidden, Rng& rng)
    : fc1(in_features, hidden, rng), fc2(hidden, 4, rng) {}

template <typename T>
BasicTensor<T> RegressionBlock<T>::forward(const BasicTensor<T>& crops) const {
  return fc2.forward(relu(fc1.forward(flatten(crops, 1))));
}

template <typename T>
void RegressionBlock<T>::collect(const std::string& prefix, StateDict<T>& state) const {
  fc1.collect(prefix + ".fc1", state);
  fc2.collect(prefix + ".fc2", state);
}

template <typename T>
BasicTensor<T> loss_roi_reg(const BasicTensor<T>& pred, std::span<const Box> proposals, std::span<const Box> gts,
                            T lambda2) {
  const int64_t F = static_cast<int64_t>(proposals.size());
  if (pred.shape() != Shape{F, 4} || gts.size() != proposals.size())
    throw ShapeError("loss_roi_reg: predictions " + shape_str(pred.shape()) + " for " + std::to_string(F) +
                     " proposals and " + std::to_string(gts.size()) + " ground truths");
  auto resid = std::make_shared<std::vector<T>>(static_cast<size_t>(4 * F));
  const T* p = pred.data().data();
  T loss = 0;
  for (int64_t f = 0; f < F; ++f) {
    const auto target = encode_box(gts[static_cast<size_t>(f)], proposals[static_cast<size_t>(f)]).values();
    for (int j = 0; j < 4; ++j) {
      const T r = p[f * 4 + j] - static_cast<T>(target[static_cast<size_t>(j)]);
      (*resid)[static_cast<size_t>(f * 4 + j)] = r;
      loss += smooth_l1_value(r);
    }
  }
  const T k = F > 0 ? lambda2 / static_cast<T>(F) : T(0);
  return BasicTensor<T>::from_op(Shape{1}, {loss * k}, {pred}, [resid, k](Node<T>& self) {
    auto g = self.parent_grad(0);
    const T up = self.pass_grad[0] * k;
    for (size_t i = 0; i < g.size(); ++i) g[i] += up * smooth_l1_grad((*resid)[i]);
  });
}

Box refine_box(const Box& proposal, const BoxDelta& delta, float frame_w, float frame_h) {
  return clip_box(decode_box(delta, proposal), frame_w, frame_h);
}

#define RMC_INSTANTIATE_CROP(T)                                                                                  \
  template BasicTensor<T> crop_pool<T>(const BasicTensor<T>&, std::span<const Box>, const CropSpec&, int64_t);  \
  template class RegressionBlock<T>;                                                                             \
  template BasicTensor<T> loss_roi_reg<T>(const BasicTensor<T>&, std::span<const Box>, std::span<const Box>, T);

RMC_INSTANTIATE_CROP(float)
RMC_INSTANTIATE_CROP(double)

}  // namespace rmc
