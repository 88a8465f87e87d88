#pragma once

#include <array>
#include <cmath>

namespace rmc {

/// Axis-aligned rectangle in frame pixels, (x1,y1) inclusive top-left and
/// (x2,y2) exclusive bottom-right.
struct Box {
  float x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  float width() const { return x2 - x1; }
  float height() const { return y2 - y1; }
  float cx() const { return 0.5f * (x1 + x2); }
  float cy() const { return 0.5f * (y1 + y2); }
  double area() const { return valid() ? static_cast<double>(width()) * height() : 0.0; }
  bool valid() const { return x1 < x2 && y1 < y2 && std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2); }
  bool inside(float frame_w, float frame_h) const { return x1 >= 0 && y1 >= 0 && x2 <= frame_w && y2 <= frame_h; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Center/size transform of a box relative to a reference box, in the order
/// (t_xc, t_yc, t_h, t_w).
struct BoxDelta {
  float t_xc = 0, t_yc = 0, t_h = 0, t_w = 0;

  std::array<float, 4> values() const { return {t_xc, t_yc, t_h, t_w}; }
  static BoxDelta from(const float* v) { return {v[0], v[1], v[2], v[3]}; }

  friend bool operator==(const BoxDelta&, const BoxDelta&) = default;
};

/// Largest log-scale change accepted by decode_box.
inline const float kMaxLogScale = std::log(1000.0f / 16.0f);

double iou(const Box& a, const Box& b);

/// Requires a non-degenerate reference box.
BoxDelta encode_box(const Box& gt, const Box& ref);
/// Inverse of encode_box; log-size terms are clamped at kMaxLogScale.
Box decode_box(const BoxDelta& d, const Box& ref);

/// Intersection with [0,w]x[0,h]. Degenerate results are snapped to a
/// minimum extent of one pixel inside the frame.
Box clip_box(const Box& b, float frame_w, float frame_h);

/// Smallest box containing all given boxes.
Box union_box(const Box* boxes, size_t count);

}  // namespace rmc
