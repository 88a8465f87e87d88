#pragma once

#include <array>
#include <string>
#include <vector>

#include "rmc/ops.hpp"
#include "rmc/rng.hpp"
#include "rmc/tensor.hpp"

namespace rmc {

enum class Mode { Train, Eval };

template <typename T>
struct NamedTensor {
  std::string name;
  BasicTensor<T> tensor;
};

/// Trainable parameters plus non-trainable buffers (batchnorm statistics).
template <typename T>
struct StateDict {
  std::vector<NamedTensor<T>> params;
  std::vector<NamedTensor<T>> buffers;

  int64_t param_count() const;
  /// Throws if a name appears twice.
  void check_unique() const;
};

/// Centered uniform init with half-width 1/sqrt(fan_in).
template <typename T>
BasicTensor<T> uniform_init(Shape shape, int64_t fan_in, Rng& rng);

/// Geometry of a 2D or 3D convolution. For 2D the temporal entries are
/// ignored (kernel 1, stride 1, padding 0).
struct ConvSpec {
  int dims = 2;
  int in = 0;
  int out = 0;
  std::array<int, 3> kernel{1, 1, 1};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{0, 0, 0};
  bool bias = false;

  static ConvSpec make2d(int in, int out, int k, int stride, int pad, bool bias = false);
  static ConvSpec make3d(int in, int out, std::array<int, 3> k, std::array<int, 3> stride, std::array<int, 3> pad,
                         bool bias = false);

  Shape weight_shape() const;
  Shape out_shape(const Shape& in_shape) const;
  int64_t macs(const Shape& in_shape) const;
  int64_t param_count() const;
};

template <typename T>
class Conv {
 public:
  Conv() = default;
  Conv(const ConvSpec& spec, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& name, StateDict<T>& state) const;
  const ConvSpec& spec() const { return spec_; }

  BasicTensor<T> weight;
  BasicTensor<T> bias;

 private:
  ConvSpec spec_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  explicit BatchNorm(int channels);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) const;
  void collect(const std::string& name, StateDict<T>& state) const;

  BasicTensor<T> gamma, beta;
  // Handles: forward in training mode updates these in place.
  BasicTensor<T> running_mean, running_var;
};

/// Convolution without bias, then batchnorm, then optional relu.
template <typename T>
class ConvBn {
 public:
  ConvBn() = default;
  ConvBn(const ConvSpec& spec, Rng& rng) : conv(spec, rng), bn(spec.out) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode, bool apply_relu) const;
  /// Parameters are named `<conv_name>.weight` and `<bn_name>.{gamma,beta}`.
  void collect(const std::string& conv_name, const std::string& bn_name, StateDict<T>& state) const;

  Conv<T> conv;
  BatchNorm<T> bn;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng);

  BasicTensor<T> forward(const BasicTensor<T>& x) const { return linear(x, weight, bias); }
  void collect(const std::string& name, StateDict<T>& state) const;
  int64_t param_count() const { return weight.numel() + bias.numel(); }

  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;
};

}  // namespace rmc
