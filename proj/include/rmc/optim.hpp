#pragma once

#include <span>
#include <vector>

#include "rmc/nn.hpp"

namespace rmc {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// One update of a single parameter buffer:
///   v <- momentum * v + g + weight_decay * p
///   p <- p - lr * v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, const SgdOptions& opt);

/// SGD with momentum over a fixed parameter list. Each parameter must appear
/// exactly once.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<NamedTensor<T>> params, SgdOptions options);

  void step();
  void zero_grad();
  const SgdOptions& options() const { return options_; }
  SgdOptions& options() { return options_; }

 private:
  std::vector<NamedTensor<T>> params_;
  std::vector<std::vector<T>> velocity_;
  SgdOptions options_;
};

}  // namespace rmc
