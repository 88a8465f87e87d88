#include "rmc/nn.hpp"

#include <cmath>
#include <set>

namespace rmc {

template <typename T>
int64_t StateDict<T>::param_count() const {
  int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

template <typename T>
void StateDict<T>::check_unique() const {
  std::set<std::string> names;
  for (const auto* list : {&params, &buffers})
    for (const auto& p : *list)
      if (!names.insert(p.name).second) throw std::logic_error("duplicate state name " + p.name);
}

template <typename T>
BasicTensor<T> uniform_init(Shape shape, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return BasicTensor<T>(std::move(shape), std::move(v), true);
}

ConvSpec ConvSpec::make2d(int in, int out, int k, int stride, int pad, bool bias) {
  return ConvSpec{2, in, out, {1, k, k}, {1, stride, stride}, {0, pad, pad}, bias};
}

ConvSpec ConvSpec::make3d(int in, int out, std::array<int, 3> k, std::array<int, 3> stride, std::array<int, 3> pad,
                          bool bias) {
  return ConvSpec{3, in, out, k, stride, pad, bias};
}

Shape ConvSpec::weight_shape() const {
  if (dims == 2) return {out, in, kernel[1], kernel[2]};
  return {out, in, kernel[0], kernel[1], kernel[2]};
}

Shape ConvSpec::out_shape(const Shape& s) const {
  const size_t rank = dims == 2 ? 4 : 5;
  if (s.size() != rank || s[1] != in)
    throw ShapeError("convolution expecting " + std::to_string(in) + " channels at rank " + std::to_string(rank) +
                     " got " + shape_str(s));
  auto ext = [](int64_t x, int k, int st, int p) { return (x + 2 * p - k) / st + 1; };
  if (dims == 2) return {s[0], out, ext(s[2], kernel[1], stride[1], padding[1]), ext(s[3], kernel[2], stride[2], padding[2])};
  return {s[0], out, ext(s[2], kernel[0], stride[0], padding[0]), ext(s[3], kernel[1], stride[1], padding[1]),
          ext(s[4], kernel[2], stride[2], padding[2])};
}

int64_t ConvSpec::macs(const Shape& s) const {
  const Shape o = out_shape(s);
  const int64_t kvol = static_cast<int64_t>(dims == 2 ? 1 : kernel[0]) * kernel[1] * kernel[2];
  return shape_numel(o) * in * kvol;
}

int64_t ConvSpec::param_count() const { return shape_numel(weight_shape()) + (bias ? out : 0); }

template <typename T>
Conv<T>::Conv(const ConvSpec& spec, Rng& rng) : spec_(spec) {
  const Shape ws = spec.weight_shape();
  const int64_t fan_in = shape_numel(ws) / spec.out;
  weight = uniform_init<T>(ws, fan_in, rng);
  if (spec.bias) bias = uniform_init<T>(Shape{spec.out}, fan_in, rng);
}

template <typename T>
BasicTensor<T> Conv<T>::forward(const BasicTensor<T>& x) const {
  if (spec_.dims == 2)
    return conv2d(x, weight, bias, {spec_.stride[1], spec_.stride[2]}, {spec_.padding[1], spec_.padding[2]});
  return conv3d(x, weight, bias, spec_.stride, spec_.padding);
}

template <typename T>
void Conv<T>::collect(const std::string& name, StateDict<T>& state) const {
  state.params.push_back({name + ".weight", weight});
  if (bias.defined()) state.params.push_back({name + ".bias", bias});
}

template <typename T>
BatchNorm<T>::BatchNorm(int channels)
    : gamma(Shape{channels}, T(1), true),
      beta(Shape{channels}, T(0), true),
      running_mean(Shape{channels}, T(0)),
      running_var(Shape{channels}, T(1)) {}

template <typename T>
BasicTensor<T> BatchNorm<T>::forward(const BasicTensor<T>& x, Mode mode) const {
  auto rm = running_mean;
  auto rv = running_var;
  return batchnorm(x, gamma, beta, rm, rv, mode == Mode::Train);
}

template <typename T>
void BatchNorm<T>::collect(const std::string& name, StateDict<T>& state) const {
  state.params.push_back({name + ".gamma", gamma});
  state.params.push_back({name + ".beta", beta});
  state.buffers.push_back({name + ".running_mean", running_mean});
  state.buffers.push_back({name + ".running_var", running_var});
}

template <typename T>
BasicTensor<T> ConvBn<T>::forward(const BasicTensor<T>& x, Mode mode, bool apply_relu) const {
  auto y = bn.forward(conv.forward(x), mode);
  return apply_relu ? relu(y) : y;
}

template <typename T>
void ConvBn<T>::collect(const std::string& conv_name, const std::string& bn_name, StateDict<T>& state) const {
  conv.collect(conv_name, state);
  bn.collect(bn_name, state);
}

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng) {
  weight = uniform_init<T>(Shape{in, out}, in, rng);
  bias = uniform_init<T>(Shape{out}, in, rng);
}

template <typename T>
void Linear<T>::collect(const std::string& name, StateDict<T>& state) const {
  state.params.push_back({name + ".weight", weight});
  state.params.push_back({name + ".bias", bias});
}

template struct StateDict<float>;
template struct StateDict<double>;
template BasicTensor<float> uniform_init<float>(Shape, int64_t, Rng&);
template BasicTensor<double> uniform_init<double>(Shape, int64_t, Rng&);
template class Conv<float>;
template class Conv<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class ConvBn<float>;
template class ConvBn<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace rmc
