#include "rmc/optim.hpp"

#include <set>
#include <stdexcept>

namespace rmc {

template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& opt) {
  if (grad.size() != param.size() || velocity.size() != param.size())
    throw std::invalid_argument("sgd_step: parameter, gradient and momentum buffers differ in size");
  const T lr = static_cast<T>(opt.lr), mu = static_cast<T>(opt.momentum), wd = static_cast<T>(opt.weight_decay);
  for (size_t i = 0; i < param.size(); ++i) {
    velocity[i] = mu * velocity[i] + grad[i] + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}

template <typename T>
Sgd<T>::Sgd(std::vector<NamedTensor<T>> params, SgdOptions options)
    : params_(std::move(params)), options_(options) {
  std::set<const Node<T>*> seen;
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) throw std::invalid_argument("parameter " + p.name + " does not require grad");
    if (!seen.insert(p.tensor.node()).second) throw std::invalid_argument("parameter " + p.name + " listed twice");
    velocity_.emplace_back(static_cast<size_t>(p.tensor.numel()), T(0));
  }
}

template <typename T>
void Sgd<T>::step() {
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& t = params_[i].tensor;
    sgd_step<T>(t.data(), t.grad(), velocity_[i], options_);
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template void sgd_step<float>(std::span<float>, std::span<const float>, std::span<float>, const SgdOptions&);
template void sgd_step<double>(std::span<double>, std::span<const double>, std::span<double>, const SgdOptions&);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace rmc
