#pragma once

#include <array>
#include <span>
#include <vector>

#include "rmc/tensor.hpp"

namespace rmc {

// Elementwise and structural ops. All are differentiable w.r.t. every tensor
// argument; integer and configuration arguments are constants.

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
/// Sum of all elements, shape [1].
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// Collapses axes [from_axis, rank) into one.
template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& a, int from_axis);
/// Output axis i is input axis perm[i].
template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& a, const std::vector<int>& perm);

/// input [N,C,H,W], weight [F,C,kh,kw], optional bias [F] (pass an undefined
/// tensor for none). Zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::array<int, 2> stride, std::array<int, 2> padding);

/// input [N,C,L,H,W], weight [F,C,kt,kh,kw]; the temporal axis is convolved
/// exactly like the spatial ones.
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      std::array<int, 3> stride, std::array<int, 3> padding);

/// Padded positions never win. Gradient goes to the first maximum in scan order.
template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input, std::array<int, 2> kernel, std::array<int, 2> stride,
                         std::array<int, 2> padding = {0, 0});
template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, std::array<int, 3> kernel, std::array<int, 3> stride,
                         std::array<int, 3> padding = {0, 0, 0});

/// Mean over every axis after the channel axis: [N,C,...] -> [N,C].
template <typename T>
BasicTensor<T> global_avgpool(const BasicTensor<T>& input);

/// input [N,D], weight [D,K], bias [K].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias);

/// Per-channel normalization over all non-channel axes of [N,C,...].
/// In training mode the batch statistics are used and the running buffers
/// move towards them: running = momentum * running + (1 - momentum) * batch.
/// In eval mode the running buffers are used unchanged.
template <typename T>
BasicTensor<T> batchnorm(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                         BasicTensor<T>& running_mean, BasicTensor<T>& running_var, bool training,
                         T momentum = T(0.9), T eps = T(1e-5));

/// Mean over rows of -log softmax(logits)[label]. logits [N,K].
template <typename T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Elementwise 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
template <typename T>
BasicTensor<T> smooth_l1(const BasicTensor<T>& input);

template <typename T>
inline T smooth_l1_value(T x) {
  T ax = x < 0 ? -x : x;
  return ax < T(1) ? T(0.5) * x * x : ax - T(0.5);
}

template <typename T>
inline T smooth_l1_grad(T x) {
  if (x <= T(-1)) return T(-1);
  if (x >= T(1)) return T(1);
  return x;
}

}  // namespace rmc
