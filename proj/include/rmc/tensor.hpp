#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmc {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised when tensor extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Graph node shared by every handle that refers to the same value.
///
/// `grad` is the persistent accumulator and only exists for leaves that
/// require gradients. `pass_grad` is scratch space for one backward pass.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  std::vector<T> pass_grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  /// Scratch gradient of parent i, allocated on first use. Empty when the
  /// parent does not take part in differentiation.
  std::span<T> parent_grad(size_t i);
};

/// Reference-semantics handle to a dense row-major tensor.
///
/// Copies alias the same storage, as in most autograd engines; use
/// `clone()` or `detach()` for a value copy.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0), bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, value); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }

  std::span<T> data() const { return node_->data; }
  std::span<T> grad() const { return node_->grad; }
  T item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Only leaves may toggle the flag; turning it on allocates a zero grad.
  BasicTensor& set_requires_grad(bool on);
  void zero_grad() const;

  /// Reverse-mode pass from this scalar; gradients accumulate into leaves.
  void backward() const;

  BasicTensor detach() const;
  BasicTensor clone() const { return detach(); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Builds the result of a differentiable operation. When grad mode is off
  /// or no input requires gradients, the result is a plain constant.
  static BasicTensor from_op(Shape shape, std::vector<T> values,
                             const std::vector<BasicTensor>& inputs,
                             std::function<void(Node<T>&)> backward_fn);

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

bool grad_enabled();

/// Disables graph recording for its lifetime (inference, evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace rmc
