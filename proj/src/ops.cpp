#include "rmc/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "gemm.hpp"

namespace rmc {

namespace {

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

template <typename T>
void require_rank(const BasicTensor<T>& a, int rank, const char* what) {
  if (a.rank() != rank)
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (size_t p = 0; p < 2; ++p) {
      auto g = self.parent_grad(p);
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.pass_grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto ga = self.parent_grad(0);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.pass_grad[i];
    auto gb = self.parent_grad(1);
    for (size_t i = 0; i < gb.size(); ++i) gb[i] -= self.pass_grad[i];
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    auto ga = self.parent_grad(0);
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.pass_grad[i] * y[i];
    auto gb = self.parent_grad(1);
    for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.pass_grad[i] * x[i];
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto g = self.parent_grad(0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.pass_grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;
  return BasicTensor<T>::from_op(Shape{1}, {s}, {a}, [](Node<T>& self) {
    auto g = self.parent_grad(0);
    for (auto& v : g) v += self.pass_grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return BasicTensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto g = self.parent_grad(0);
    const auto& x = self.parents[0]->data;
    for (size_t i = 0; i < g.size(); ++i)
      if (x[i] > T(0)) g[i] += self.pass_grad[i];
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<T> out(a.data().begin(), a.data().end());
  return BasicTensor<T>::from_op(std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto g = self.parent_grad(0);
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.pass_grad[i];
  });
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& a, int from_axis) {
  if (from_axis < 0 || from_axis >= a.rank())
    throw ShapeError("flatten: axis " + std::to_string(from_axis) + " out of range for " + shape_str(a.shape()));
  Shape s(a.shape().begin(), a.shape().begin() + from_axis);
  int64_t tail = 1;
  for (int i = from_axis; i < a.rank(); ++i) tail *= a.dim(i);
  s.push_back(tail);
  return reshape(a, std::move(s));
}

namespace {

// Maps every output linear index to its input linear index.
std::vector<int64_t> permutation_index(const Shape& in, const std::vector<int>& perm) {
  const size_t r = in.size();
  std::vector<int64_t> in_stride(r, 1);
  for (size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<int64_t> step(r);
  for (size_t i = 0; i < r; ++i) {
    out[i] = in[static_cast<size_t>(perm[i])];
    step[i] = in_stride[static_cast<size_t>(perm[i])];
  }
  std::vector<int64_t> map(static_cast<size_t>(shape_numel(in)));
  std::vector<int64_t> idx(r, 0);
  int64_t src = 0;
  for (size_t o = 0; o < map.size(); ++o) {
    map[o] = src;
    for (size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out[ax]) {
        src += step[ax];
        break;
      }
      src -= step[ax] * (out[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm) {
  const int r = a.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: permutation rank mismatch");
  std::vector<bool> used(static_cast<size_t>(r), false);
  for (int p : perm) {
    if (p < 0 || p >= r || used[static_cast<size_t>(p)]) throw ShapeError("permute: invalid permutation");
    used[static_cast<size_t>(p)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) out_shape[static_cast<size_t>(i)] = a.dim(perm[static_cast<size_t>(i)]);
  auto map = std::make_shared<std::vector<int64_t>>(permutation_index(a.shape(), perm));
  auto x = a.data();
  std::vector<T> out(x.size());
  for (size_t o = 0; o < out.size(); ++o) out[o] = x[static_cast<size_t>((*map)[o])];
  return BasicTensor<T>::from_op(std::move(out_shape), std::move(out), {a}, [map](Node<T>& self) {
    auto g = self.parent_grad(0);
    for (size_t o = 0; o < self.pass_grad.size(); ++o) g[static_cast<size_t>((*map)[o])] += self.pass_grad[o];
  });
}

// ---------------------------------------------------------------------------
// Convolution: im2col over a chunk of samples followed by one GEMM.

namespace {

struct ConvGeom {
  int64_t n, c, d, h, w;
  int64_t f, kd, kh, kw;
  int64_t sd, sh, sw;
  int64_t pd, ph, pw;
  int64_t od, oh, ow;

  int64_t k() const { return c * kd * kh * kw; }
  int64_t out_plane() const { return od * oh * ow; }
  int64_t in_plane() const { return d * h * w; }
};

// Column block budget in elements; also fixes the chunking, and with it the
// accumulation order, as a function of shapes only.
constexpr int64_t kColBudget = int64_t(1) << 22;

int64_t samples_per_chunk(const ConvGeom& g) {
  int64_t per = g.k() * g.out_plane();
  return std::max<int64_t>(1, kColBudget / std::max<int64_t>(per, 1));
}

// Valid output range [lo, hi) along one axis for kernel offset `off`.
inline void valid_range(int64_t out, int64_t in, int64_t stride, int64_t pad, int64_t off, int64_t& lo,
                        int64_t& hi) {
  // need 0 <= o*stride - pad + off < in
  int64_t a = pad - off;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int64_t b = in - 1 + pad - off;
  hi = b < 0 ? 0 : b / stride + 1;
  lo = std::min(lo, out);
  hi = std::min(std::max(hi, lo), out);
}

template <typename T>
void im2col(const ConvGeom& g, const T* x, int64_t n0, int64_t n1, T* col) {
  const int64_t plane = g.out_plane();
  const int64_t cols = (n1 - n0) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t a = 0; a < g.kd; ++a)
      for (int64_t b = 0; b < g.kh; ++b)
        for (int64_t e = 0; e < g.kw; ++e, ++row) {
          T* dst = col + row * cols;
          int64_t wlo, whi;
          valid_range(g.ow, g.w, g.sw, g.pw, e, wlo, whi);
          for (int64_t n = n0; n < n1; ++n) {
            const T* xc = x + (n * g.c + c) * g.in_plane();
            for (int64_t od = 0; od < g.od; ++od) {
              const int64_t id = od * g.sd - g.pd + a;
              for (int64_t oh = 0; oh < g.oh; ++oh, dst += g.ow) {
                const int64_t ih = oh * g.sh - g.ph + b;
                if (id < 0 || id >= g.d || ih < 0 || ih >= g.h) {
                  std::fill(dst, dst + g.ow, T(0));
                  continue;
                }
                const T* src = xc + (id * g.h + ih) * g.w - g.pw + e;
                std::fill(dst, dst + wlo, T(0));
                if (g.sw == 1) {
                  std::copy(src + wlo, src + whi, dst + wlo);
                } else {
                  for (int64_t ow = wlo; ow < whi; ++ow) dst[ow] = src[ow * g.sw];
                }
                std::fill(dst + whi, dst + g.ow, T(0));
              }
            }
          }
        }
}

template <typename T>
void col2im(const ConvGeom& g, const T* col, int64_t n0, int64_t n1, T* dx) {
  const int64_t plane = g.out_plane();
  const int64_t cols = (n1 - n0) * plane;
  int64_t row = 0;
  for (int64_t c = 0; c < g.c; ++c)
    for (int64_t a = 0; a < g.kd; ++a)
      for (int64_t b = 0; b < g.kh; ++b)
        for (int64_t e = 0; e < g.kw; ++e, ++row) {
          const T* src = col + row * cols;
          int64_t wlo, whi;
          valid_range(g.ow, g.w, g.sw, g.pw, e, wlo, whi);
          for (int64_t n = n0; n < n1; ++n) {
            T* xc = dx + (n * g.c + c) * g.in_plane();
            for (int64_t od = 0; od < g.od; ++od) {
              const int64_t id = od * g.sd - g.pd + a;
              for (int64_t oh = 0; oh < g.oh; ++oh, src += g.ow) {
                const int64_t ih = oh * g.sh - g.ph + b;
                if (id < 0 || id >= g.d || ih < 0 || ih >= g.h) continue;
                T* dst = xc + (id * g.h + ih) * g.w - g.pw + e;
                for (int64_t ow = wlo; ow < whi; ++ow) dst[ow * g.sw] += src[ow];
              }
            }
          }
        }
}

template <typename T>
BasicTensor<T> conv_generic(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                            const ConvGeom& g, const Shape& out_shape) {
  const int64_t K = g.k(), plane = g.out_plane(), F = g.f;
  const int64_t chunk = samples_per_chunk(g);
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  const T* bs = bias.defined() ? bias.data().data() : nullptr;
  std::vector<T> out(static_cast<size_t>(g.n * F * plane));
  std::vector<T> col, res;
  for (int64_t n0 = 0; n0 < g.n; n0 += chunk) {
    const int64_t n1 = std::min(g.n, n0 + chunk);
    const int64_t cols = (n1 - n0) * plane;
    col.resize(static_cast<size_t>(K * cols));
    res.resize(static_cast<size_t>(F * cols));
    im2col(g, x, n0, n1, col.data());
    detail::gemm<T>(false, false, F, cols, K, T(1), wt, K, col.data(), cols, T(0), res.data(), cols);
    for (int64_t n = n0; n < n1; ++n)
      for (int64_t f = 0; f < F; ++f) {
        const T* src = res.data() + f * cols + (n - n0) * plane;
        T* dst = out.data() + (n * F + f) * plane;
        const T b = bs ? bs[f] : T(0);
        for (int64_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
      }
  }

  std::vector<BasicTensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return BasicTensor<T>::from_op(out_shape, std::move(out), inputs, [g, chunk](Node<T>& self) {
    const int64_t K = g.k(), plane = g.out_plane(), F = g.f;
    const T* x = self.parents[0]->data.data();
    const T* wt = self.parents[1]->data.data();
    auto gx = self.parent_grad(0);
    auto gw = self.parent_grad(1);
    std::span<T> gb = self.parents.size() > 2 ? self.parent_grad(2) : std::span<T>{};
    const T* dy = self.pass_grad.data();
    std::vector<T> col, dyc, dcol;
    for (int64_t n0 = 0; n0 < g.n; n0 += chunk) {
      const int64_t n1 = std::min(g.n, n0 + chunk);
      const int64_t cols = (n1 - n0) * plane;
      dyc.resize(static_cast<size_t>(F * cols));
      for (int64_t n = n0; n < n1; ++n)
        for (int64_t f = 0; f < F; ++f)
          std::copy_n(dy + (n * F + f) * plane, plane, dyc.data() + f * cols + (n - n0) * plane);
      if (!gb.empty())
        for (int64_t f = 0; f < F; ++f) {
          T s = 0;
          const T* r = dyc.data() + f * cols;
          for (int64_t p = 0; p < cols; ++p) s += r[p];
          gb[static_cast<size_t>(f)] += s;
        }
      if (!gw.empty()) {
        col.resize(static_cast<size_t>(K * cols));
        im2col(g, x, n0, n1, col.data());
        detail::gemm<T>(false, true, F, K, cols, T(1), dyc.data(), cols, col.data(), cols, T(1), gw.data(), K);
      }
      if (!gx.empty()) {
        dcol.resize(static_cast<size_t>(K * cols));
        detail::gemm<T>(true, false, K, cols, F, T(1), wt, K, dyc.data(), cols, T(0), dcol.data(), cols);
        col2im(g, dcol.data(), n0, n1, gx.data());
      }
    }
  });
}

int64_t conv_out_extent(int64_t in, int64_t k, int64_t s, int64_t p, const char* axis) {
  if (s <= 0) throw ShapeError(std::string("convolution stride must be positive on axis ") + axis);
  if (p < 0) throw ShapeError(std::string("convolution padding must be non-negative on axis ") + axis);
  if (in + 2 * p < k)
    throw ShapeError(std::string("kernel larger than padded input on axis ") + axis + " (" + std::to_string(k) +
                     " > " + std::to_string(in + 2 * p) + ")");
  return (in + 2 * p - k) / s + 1;
}

template <typename T>
void check_bias(const BasicTensor<T>& bias, int64_t f) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != f))
    throw ShapeError("bias shape " + shape_str(bias.shape()) + " does not match " + std::to_string(f) +
                     " output channels");
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::array<int, 2> stride, std::array<int, 2> padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: input " + shape_str(input.shape()) + " and weight " + shape_str(weight.shape()) +
                     " disagree on input channels");
  check_bias(bias, weight.dim(0));
  ConvGeom g{};
  g.n = input.dim(0), g.c = input.dim(1), g.d = 1, g.h = input.dim(2), g.w = input.dim(3);
  g.f = weight.dim(0), g.kd = 1, g.kh = weight.dim(2), g.kw = weight.dim(3);
  g.sd = 1, g.sh = stride[0], g.sw = stride[1];
  g.pd = 0, g.ph = padding[0], g.pw = padding[1];
  g.od = 1;
  g.oh = conv_out_extent(g.h, g.kh, g.sh, g.ph, "H");
  g.ow = conv_out_extent(g.w, g.kw, g.sw, g.pw, "W");
  return conv_generic(input, weight, bias, g, Shape{g.n, g.f, g.oh, g.ow});
}

template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::array<int, 3> stride, std::array<int, 3> padding) {
  require_rank(input, 5, "conv3d input");
  require_rank(weight, 5, "conv3d weight");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv3d: input " + shape_str(input.shape()) + " and weight " + shape_str(weight.shape()) +
                     " disagree on input channels");
  check_bias(bias, weight.dim(0));
  ConvGeom g{};
  g.n = input.dim(0), g.c = input.dim(1), g.d = input.dim(2), g.h = input.dim(3), g.w = input.dim(4);
  g.f = weight.dim(0), g.kd = weight.dim(2), g.kh = weight.dim(3), g.kw = weight.dim(4);
  g.sd = stride[0], g.sh = stride[1], g.sw = stride[2];
  g.pd = padding[0], g.ph = padding[1], g.pw = padding[2];
  g.od = conv_out_extent(g.d, g.kd, g.sd, g.pd, "L");
  g.oh = conv_out_extent(g.h, g.kh, g.sh, g.ph, "H");
  g.ow = conv_out_extent(g.w, g.kw, g.sw, g.pw, "W");
  return conv_generic(input, weight, bias, g, Shape{g.n, g.f, g.od, g.oh, g.ow});
}

// ---------------------------------------------------------------------------
// Pooling

namespace {

template <typename T>
BasicTensor<T> maxpool_generic(const BasicTensor<T>& input, const ConvGeom& g, const Shape& out_shape) {
  const int64_t planes = g.n * g.c;
  const int64_t out_plane = g.out_plane();
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(planes * out_plane));
  std::vector<T> out(argmax->size());
  const T* x = input.data().data();
  for (int64_t pl = 0; pl < planes; ++pl) {
    const T* xp = x + pl * g.in_plane();
    for (int64_t od = 0; od < g.od; ++od)
      for (int64_t oh = 0; oh < g.oh; ++oh)
        for (int64_t ow = 0; ow < g.ow; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_i = -1;
          for (int64_t a = 0; a < g.kd; ++a) {
            const int64_t id = od * g.sd - g.pd + a;
            if (id < 0 || id >= g.d) continue;
            for (int64_t b = 0; b < g.kh; ++b) {
              const int64_t ih = oh * g.sh - g.ph + b;
              if (ih < 0 || ih >= g.h) continue;
              for (int64_t e = 0; e < g.kw; ++e) {
                const int64_t iw = ow * g.sw - g.pw + e;
                if (iw < 0 || iw >= g.w) continue;
                const int64_t i = (id * g.h + ih) * g.w + iw;
                if (best_i < 0 || xp[i] > best) {
                  best = xp[i];
                  best_i = i;
                }
              }
            }
          }
          const int64_t o = pl * out_plane + (od * g.oh + oh) * g.ow + ow;
          out[static_cast<size_t>(o)] = best;
          (*argmax)[static_cast<size_t>(o)] = pl * g.in_plane() + best_i;
        }
  }
  return BasicTensor<T>::from_op(out_shape, std::move(out), {input}, [argmax](Node<T>& self) {
    auto gx = self.parent_grad(0);
    for (size_t o = 0; o < argmax->size(); ++o) gx[static_cast<size_t>((*argmax)[o])] += self.pass_grad[o];
  });
}

int64_t pool_out_extent(int64_t in, int64_t k, int64_t s, int64_t p, const char* axis) {
  if (k <= 0) throw ShapeError(std::string("pooling kernel must be positive on axis ") + axis);
  if (p * 2 > k) throw ShapeError(std::string("pooling padding exceeds half the kernel on axis ") + axis);
  return conv_out_extent(in, k, s, p, axis);
}

}  // namespace

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::array<int, 2> kernel, std::array<int, 2> stride,
                         std::array<int, 2> padding) {
  require_rank(input, 4, "maxpool2d input");
  ConvGeom g{};
  g.n = input.dim(0), g.c = input.dim(1), g.d = 1, g.h = input.dim(2), g.w = input.dim(3);
  g.kd = 1, g.kh = kernel[0], g.kw = kernel[1];
  g.sd = 1, g.sh = stride[0], g.sw = stride[1];
  g.pd = 0, g.ph = padding[0], g.pw = padding[1];
  g.od = 1;
  g.oh = pool_out_extent(g.h, g.kh, g.sh, g.ph, "H");
  g.ow = pool_out_extent(g.w, g.kw, g.sw, g.pw, "W");
  return maxpool_generic(input, g, Shape{g.n, g.c, g.oh, g.ow});
}

template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, std::array<int, 3> kernel, std::array<int, 3> stride,
                         std::array<int, 3> padding) {
  require_rank(input, 5, "maxpool3d input");
  ConvGeom g{};
  g.n = input.dim(0), g.c = input.dim(1), g.d = input.dim(2), g.h = input.dim(3), g.w = input.dim(4);
  g.kd = kernel[0], g.kh = kernel[1], g.kw = kernel[2];
  g.sd = stride[0], g.sh = stride[1], g.sw = stride[2];
  g.pd = padding[0], g.ph = padding[1], g.pw = padding[2];
  g.od = pool_out_extent(g.d, g.kd, g.sd, g.pd, "L");
  g.oh = pool_out_extent(g.h, g.kh, g.sh, g.ph, "H");
  g.ow = pool_out_extent(g.w, g.kw, g.sw, g.pw, "W");
  return maxpool_generic(input, g, Shape{g.n, g.c, g.od, g.oh, g.ow});
}

template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& input) {
  if (input.rank() < 3) throw ShapeError("global_avgpool needs [N,C,...], got " + shape_str(input.shape()));
  const int64_t nc = input.dim(0) * input.dim(1);
  const int64_t plane = input.numel() / nc;
  const T inv = T(1) / static_cast<T>(plane);
  const T* x = input.data().data();
  std::vector<T> out(static_cast<size_t>(nc));
  for (int64_t i = 0; i < nc; ++i) {
    T s = 0;
    for (int64_t p = 0; p < plane; ++p) s += x[i * plane + p];
    out[static_cast<size_t>(i)] = s * inv;
  }
  return BasicTensor<T>::from_op(Shape{input.dim(0), input.dim(1)}, std::move(out), {input},
                                 [plane, inv](Node<T>& self) {
                                   auto g = self.parent_grad(0);
                                   for (size_t i = 0; i < self.pass_grad.size(); ++i) {
                                     const T v = self.pass_grad[i] * inv;
                                     T* dst = g.data() + static_cast<int64_t>(i) * plane;
                                     for (int64_t p = 0; p < plane; ++p) dst[p] += v;
                                   }
                                 });
}

// ---------------------------------------------------------------------------
// Dense

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  if (input.dim(1) != weight.dim(0))
    throw ShapeError("linear: input " + shape_str(input.shape()) + " and weight " + shape_str(weight.shape()) +
                     " inner extents differ");
  const int64_t N = input.dim(0), D = input.dim(1), K = weight.dim(1);
  check_bias(bias, K);
  std::vector<T> out(static_cast<size_t>(N * K), T(0));
  if (bias.defined())
    for (int64_t n = 0; n < N; ++n) std::copy_n(bias.data().data(), K, out.data() + n * K);
  detail::gemm<T>(false, false, N, K, D, T(1), input.data().data(), D, weight.data().data(), K, T(1), out.data(), K);
  std::vector<BasicTensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return BasicTensor<T>::from_op(Shape{N, K}, std::move(out), inputs, [N, D, K](Node<T>& self) {
    const T* dy = self.pass_grad.data();
    auto gx = self.parent_grad(0);
    auto gw = self.parent_grad(1);
    if (!gx.empty())
      detail::gemm<T>(false, true, N, D, K, T(1), dy, K, self.parents[1]->data.data(), K, T(1), gx.data(), D);
    if (!gw.empty())
      detail::gemm<T>(true, false, D, K, N, T(1), self.parents[0]->data.data(), D, dy, K, T(1), gw.data(), K);
    if (self.parents.size() > 2) {
      auto gb = self.parent_grad(2);
      if (!gb.empty())
        for (int64_t n = 0; n < N; ++n)
          for (int64_t k = 0; k < K; ++k) gb[static_cast<size_t>(k)] += dy[n * K + k];
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                         BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training, T momentum,
                         T eps) {
  if (input.rank() < 2) throw ShapeError("batchnorm needs [N,C,...], got " + shape_str(input.shape()));
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t plane = input.numel() / (N * C);
  const int64_t M = N * plane;
  for (const BasicTensor<T>* t : std::array<const BasicTensor<T>*, 4>{&gamma, &beta, &running_mean, &running_var})
    if (t->rank() != 1 || t->dim(0) != C)
      throw ShapeError("batchnorm parameter shape " + shape_str(t->shape()) + " does not match " +
                       std::to_string(C) + " channels");
  const T* x = input.data().data();
  std::vector<T> mu(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  if (training) {
    if (M < 2) throw ShapeError("batchnorm in training mode needs more than one value per channel");
    for (int64_t c = 0; c < C; ++c) {
      double s = 0, ss = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(M);
      for (int64_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(M);
      mu[static_cast<size_t>(c)] = static_cast<T>(m);
      inv_std[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      auto rm = running_mean.data();
      auto rv = running_var.data();
      const double unbiased = var * static_cast<double>(M) / static_cast<double>(M - 1);
      rm[static_cast<size_t>(c)] = static_cast<T>(momentum * rm[static_cast<size_t>(c)] + (1 - momentum) * m);
      rv[static_cast<size_t>(c)] = static_cast<T>(momentum * rv[static_cast<size_t>(c)] + (1 - momentum) * unbiased);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mu[static_cast<size_t>(c)] = running_mean.data()[static_cast<size_t>(c)];
      inv_std[static_cast<size_t>(c)] = T(1) / std::sqrt(running_var.data()[static_cast<size_t>(c)] + eps);
    }
  }
  auto xhat = std::make_shared<std::vector<T>>(input.data().size());
  std::vector<T> out(input.data().size());
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const int64_t off = (n * C + c) * plane;
      const T m = mu[static_cast<size_t>(c)], is = inv_std[static_cast<size_t>(c)];
      for (int64_t i = 0; i < plane; ++i) {
        const T h = (x[off + i] - m) * is;
        (*xhat)[static_cast<size_t>(off + i)] = h;
        out[static_cast<size_t>(off + i)] = gm[c] * h + bt[c];
      }
    }
  return BasicTensor<T>::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [xhat, inv_std = std::move(inv_std), N, C, plane, M, training](Node<T>& self) {
        const T* dy = self.pass_grad.data();
        const T* gm = self.parents[1]->data.data();
        auto gx = self.parent_grad(0);
        auto gg = self.parent_grad(1);
        auto gbeta = self.parent_grad(2);
        for (int64_t c = 0; c < C; ++c) {
          T sdy = 0, sdyx = 0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              sdy += dy[off + i];
              sdyx += dy[off + i] * (*xhat)[static_cast<size_t>(off + i)];
            }
          }
          if (!gg.empty()) gg[static_cast<size_t>(c)] += sdyx;
          if (!gbeta.empty()) gbeta[static_cast<size_t>(c)] += sdy;
          if (gx.empty()) continue;
          const T k = gm[c] * inv_std[static_cast<size_t>(c)];
          const T invm = T(1) / static_cast<T>(M);
          for (int64_t n = 0; n < N; ++n) {
            const int64_t off = (n * C + c) * plane;
            for (int64_t i = 0; i < plane; ++i) {
              const size_t j = static_cast<size_t>(off + i);
              if (training)
                gx[j] += k * (dy[j] - invm * sdy - (*xhat)[j] * invm * sdyx);
              else
                gx[j] += k * dy[j];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Losses

template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows");
  for (int l : labels)
    if (l < 0 || l >= K) throw std::out_of_range("label " + std::to_string(l) + " outside [0, " + std::to_string(K) + ")");
  const T* z = logits.data().data();
  auto prob = std::make_shared<std::vector<T>>(static_cast<size_t>(N * K));
  T loss = 0;
  for (int64_t n = 0; n < N; ++n) {
    const T* row = z + n * K;
    const T mx = *std::max_element(row, row + K);
    T s = 0;
    for (int64_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    const T lse = mx + std::log(s);
    for (int64_t k = 0; k < K; ++k) (*prob)[static_cast<size_t>(n * K + k)] = std::exp(row[k] - lse);
    loss += lse - row[labels[static_cast<size_t>(n)]];
  }
  loss /= static_cast<T>(N);
  std::vector<int> lab(labels.begin(), labels.end());
  return BasicTensor<T>::from_op(Shape{1}, {loss}, {logits}, [prob, lab = std::move(lab), N, K](Node<T>& self) {
    auto g = self.parent_grad(0);
    const T up = self.pass_grad[0] / static_cast<T>(N);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t k = 0; k < K; ++k) {
        const size_t i = static_cast<size_t>(n * K + k);
        g[i] += up * ((*prob)[i] - (k == lab[static_cast<size_t>(n)] ? T(1) : T(0)));
      }
  });
}

template <typename T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& input) {
  auto x = input.data();
  std::vector<T> out(x.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = smooth_l1_value(x[i]);
  return BasicTensor<T>::from_op(input.shape(), std::move(out), {input}, [](Node<T>& self) {
    auto g = self.parent_grad(0);
    const auto& x = self.parents[0]->data;
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.pass_grad[i] * smooth_l1_grad(x[i]);
  });
}

#define RMC_INSTANTIATE_OPS(T)                                                                                 \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                   \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                     \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                         \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                               \
  template BasicTensor<T> flatten(const BasicTensor<T>&, int);                                                 \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<int>&);                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                 std::array<int, 2>, std::array<int, 2>);                                      \
  template BasicTensor<T> conv3d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,          \
                                 std::array<int, 3>, std::array<int, 3>);                                      \
  template BasicTensor<T> maxpool2d(const BasicTensor<T>&, std::array<int, 2>, std::array<int, 2>,             \
                                    std::array<int, 2>);                                                       \
  template BasicTensor<T> maxpool3d(const BasicTensor<T>&, std::array<int, 3>, std::array<int, 3>,             \
                                    std::array<int, 3>);                                                       \
  template BasicTensor<T> global_avgpool(const BasicTensor<T>&);                                               \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> batchnorm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,       \
                                    BasicTensor<T>&, BasicTensor<T>&, bool, T, T);                             \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);                  \
  template BasicTensor<T> smooth_l1(const BasicTensor<T>&);

RMC_INSTANTIATE_OPS(float)
RMC_INSTANTIATE_OPS(double)

}  // namespace rmc
