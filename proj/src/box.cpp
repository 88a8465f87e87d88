#include "rmc/box.hpp"

#include <algorithm>
#include <stdexcept>

namespace rmc {

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) return 0.0;
  const double iw = std::min<double>(a.x2, b.x2) - std::max<double>(a.x1, b.x1);
  const double ih = std::min<double>(a.y2, b.y2) - std::max<double>(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoxDelta encode_box(const Box& gt, const Box& ref) {
  if (!ref.valid()) throw std::invalid_argument("encode_box: degenerate reference box");
  const double rw = ref.width(), rh = ref.height();
  const double gw = gt.width(), gh = gt.height();
  return {static_cast<float>((0.5 * (gt.x1 + gt.x2) - 0.5 * (ref.x1 + ref.x2)) / rw),
          static_cast<float>((0.5 * (gt.y1 + gt.y2) - 0.5 * (ref.y1 + ref.y2)) / rh),
          static_cast<float>(std::log(gh / rh)), static_cast<float>(std::log(gw / rw))};
}

Box decode_box(const BoxDelta& d, const Box& ref) {
  const double rw = ref.width(), rh = ref.height();
  const double cx = 0.5 * (ref.x1 + ref.x2) + d.t_xc * rw;
  const double cy = 0.5 * (ref.y1 + ref.y2) + d.t_yc * rh;
  const double w = rw * std::exp(std::min<double>(d.t_w, kMaxLogScale));
  const double h = rh * std::exp(std::min<double>(d.t_h, kMaxLogScale));
  return {static_cast<float>(cx - 0.5 * w), static_cast<float>(cy - 0.5 * h), static_cast<float>(cx + 0.5 * w),
          static_cast<float>(cy + 0.5 * h)};
}

Box clip_box(const Box& b, float frame_w, float frame_h) {
  auto clamp = [](float v, float hi) { return std::isfinite(v) ? std::clamp(v, 0.0f, hi) : 0.0f; };
  Box c{clamp(b.x1, frame_w), clamp(b.y1, frame_h), clamp(b.x2, frame_w), clamp(b.y2, frame_h)};
  auto snap = [](float& lo, float& hi, float limit) {
    if (hi - lo >= 1.0f) return;
    const float mid = std::clamp(0.5f * (lo + hi), 0.5f, limit - 0.5f);
    lo = mid - 0.5f;
    hi = mid + 0.5f;
  };
  snap(c.x1, c.x2, frame_w);
  snap(c.y1, c.y2, frame_h);
  return c;
}

Box union_box(const Box* boxes, size_t count) {
  if (count == 0) throw std::invalid_argument("union_box of no boxes");
  Box u = boxes[0];
  for (size_t i = 1; i < count; ++i) {
    u.x1 = std::min(u.x1, boxes[i].x1);
    u.y1 = std::min(u.y1, boxes[i].y1);
    u.x2 = std::max(u.x2, boxes[i].x2);
    u.y2 = std::max(u.y2, boxes[i].y2);
  }
  return u;
}

}  // namespace rmc
