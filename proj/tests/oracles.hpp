#pragma once

// Naive reference implementations used as independent test oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "rmc/box.hpp"
#include "rmc/rng.hpp"
#include "rmc/rpn.hpp"
#include "rmc/tensor.hpp"

namespace oracle {

using rmc::Box;

inline std::vector<float> random_values(rmc::Rng& rng, size_t n, double lo = -1, double hi = 1) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

inline rmc::Tensor random_tensor(rmc::Rng& rng, rmc::Shape shape, double lo = -1, double hi = 1) {
  const auto n = static_cast<size_t>(rmc::shape_numel(shape));
  return rmc::Tensor(std::move(shape), random_values(rng, n, lo, hi));
}

/// Direct 3D convolution over [N,C,L,H,W] with weight [F,C,kt,kh,kw].
inline std::vector<double> conv3d(const std::vector<float>& x, int N, int C, int L, int H, int W,
                                  const std::vector<float>& w, int F, int kt, int kh, int kw,
                                  const std::vector<float>* bias, int st, int sh, int sw, int pt, int ph, int pw,
                                  int& Lo, int& Ho, int& Wo) {
  Lo = (L + 2 * pt - kt) / st + 1;
  Ho = (H + 2 * ph - kh) / sh + 1;
  Wo = (W + 2 * pw - kw) / sw + 1;
  std::vector<double> y(static_cast<size_t>(N) * F * Lo * Ho * Wo, 0.0);
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int t = 0; t < Lo; ++t)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            double s = bias ? (*bias)[static_cast<size_t>(f)] : 0.0;
            for (int c = 0; c < C; ++c)
              for (int a = 0; a < kt; ++a)
                for (int b = 0; b < kh; ++b)
                  for (int d = 0; d < kw; ++d) {
                    const int tt = t * st - pt + a, ii = i * sh - ph + b, jj = j * sw - pw + d;
                    if (tt < 0 || tt >= L || ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                    s += static_cast<double>(x[((((static_cast<size_t>(n) * C + c) * L + tt) * H + ii) * W + jj)]) *
                         w[(((static_cast<size_t>(f) * C + c) * kt + a) * kh + b) * kw + d];
                  }
            y[(((static_cast<size_t>(n) * F + f) * Lo + t) * Ho + i) * Wo + j] = s;
          }
  return y;
}

/// Direct max pooling over [N,C,L,H,W]; padded cells never win.
inline std::vector<float> maxpool3d(const std::vector<float>& x, int N, int C, int L, int H, int W, int kt, int kh,
                                    int kw, int st, int sh, int sw, int pt, int ph, int pw, int& Lo, int& Ho,
                                    int& Wo) {
  Lo = (L + 2 * pt - kt) / st + 1;
  Ho = (H + 2 * ph - kh) / sh + 1;
  Wo = (W + 2 * pw - kw) / sw + 1;
  std::vector<float> y;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < Lo; ++t)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j) {
            float m = -std::numeric_limits<float>::infinity();
            for (int a = 0; a < kt; ++a)
              for (int b = 0; b < kh; ++b)
                for (int d = 0; d < kw; ++d) {
                  const int tt = t * st - pt + a, ii = i * sh - ph + b, jj = j * sw - pw + d;
                  if (tt < 0 || tt >= L || ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                  m = std::max(m, x[((((static_cast<size_t>(n) * C + c) * L + tt) * H + ii) * W + jj)]);
                }
            y.push_back(m);
          }
  return y;
}

/// IoU of integer boxes by counting unit cells.
inline double iou_cells(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2, int by2) {
  int64_t inter = 0, a = 0, b = 0;
  const int lo_x = std::min(ax1, bx1), hi_x = std::max(ax2, bx2);
  const int lo_y = std::min(ay1, by1), hi_y = std::max(ay2, by2);
  for (int y = lo_y; y < hi_y; ++y)
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      a += in_a;
      b += in_b;
      inter += in_a && in_b;
    }
  if (a == 0 || b == 0 || inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(a + b - inter);
}

/// Average precision from the definition: sweep every distinct score as a
/// threshold, take precision and recall of the set above it, and integrate
/// the upper envelope of precision over recall.
inline double average_precision(const std::vector<double>& scores, const std::vector<char>& tp, int64_t n_gt) {
  if (n_gt <= 0) return 0.0;
  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (double t : thresholds) {
    int64_t hit = 0, kept = 0;
    for (size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= t) {
        ++kept;
        hit += tp[i] != 0;
      }
    pr.emplace_back(static_cast<double>(hit) / static_cast<double>(n_gt),
                    static_cast<double>(hit) / static_cast<double>(kept));
  }
  double ap = 0, prev = 0;
  for (size_t k = 0; k < pr.size(); ++k) {
    double best = 0;
    for (size_t m = k; m < pr.size(); ++m) best = std::max(best, pr[m].second);
    ap += (pr[k].first - prev) * best;
    prev = pr[k].first;
  }
  return ap;
}

/// Bilinear sample of a [H,W] map at continuous (y, x), clamped to the map.
inline double bilinear(const float* m, int H, int W, double y, double x) {
  y = std::clamp(y, 0.0, H - 1.0);
  x = std::clamp(x, 0.0, W - 1.0);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
  const double fy = y - y0, fx = x - x0;
  return m[y0 * W + x0] * (1 - fy) * (1 - fx) + m[y0 * W + x1] * (1 - fy) * fx + m[y1 * W + x0] * fy * (1 - fx) +
         m[y1 * W + x1] * fy * fx;
}

/// Anchor labels by definition: outside the frame is ignored (-1), IoU at or
/// above pos_iou or the best in-frame anchor is positive (1), below neg_iou is
/// a negative candidate (0), anything else is ignored.
struct BruteAssignment {
  std::vector<int> labels;
  int positives = 0;
  int negatives = 0;
  /// Counts after keeping every positive and at most max_samples - positives negatives.
  int n_cls(int max_samples) const { return positives + std::min(negatives, std::max(0, max_samples - positives)); }
};

inline BruteAssignment assign(const rmc::AnchorSet& set, const Box& gt, double pos_iou, double neg_iou, float fw,
                              float fh) {
  BruteAssignment r;
  r.labels.assign(set.size(), -1);
  auto inside = [&](const Box& b) { return b.x1 >= 0 && b.y1 >= 0 && b.x2 <= fw && b.y2 <= fh; };
  size_t best = 0;
  double best_iou = -1;
  for (size_t i = 0; i < set.size(); ++i) {
    if (!inside(set.anchors[i])) continue;
    const double o = rmc::iou(set.anchors[i], gt);
    if (o > best_iou) {
      best_iou = o;
      best = i;
    }
  }
  for (size_t i = 0; i < set.size(); ++i) {
    if (!inside(set.anchors[i])) continue;
    const double o = rmc::iou(set.anchors[i], gt);
    if (o >= pos_iou || i == best) {
      r.labels[i] = 1;
      ++r.positives;
    } else if (o < neg_iou) {
      r.labels[i] = 0;
      ++r.negatives;
    }
  }
  return r;
}

/// Highest objectness margin z1 - z0 of frame f over head logits laid out
/// [F,A,H,W,2]; ties go to the lowest anchor index (row*W + col)*A + a.
inline std::pair<int64_t, double> top_anchor(const float* logits, int f, int A, int H, int W) {
  int64_t best = -1;
  double margin = -std::numeric_limits<double>::infinity();
  for (int row = 0; row < H; ++row)
    for (int col = 0; col < W; ++col)
      for (int a = 0; a < A; ++a) {
        const size_t o = static_cast<size_t>((((f * A + a) * H + row) * W + col) * 2);
        const double m = static_cast<double>(logits[o + 1]) - logits[o];
        const int64_t index = (row * W + col) * A + a;
        if (m > margin || (m == margin && index < best)) {
          margin = m;
          best = index;
        }
      }
  return {best, margin};
}

/// Box from deltas (t_xc, t_yc, t_h, t_w) applied to an anchor, clipped.
inline Box decode_clipped(const Box& an, const float* t, float fw, float fh) {
  const double cx = an.cx() + t[0] * an.width(), cy = an.cy() + t[1] * an.height();
  const double h = an.height() * std::exp(t[2]), w = an.width() * std::exp(t[3]);
  return rmc::clip_box(Box{float(cx - w / 2), float(cy - h / 2), float(cx + w / 2), float(cy + h / 2)}, fw, fh);
}

inline double smooth_l1(double x) { return std::abs(x) < 1 ? 0.5 * x * x : std::abs(x) - 0.5; }

}  // namespace oracle
