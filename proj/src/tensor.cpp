#include "rmc/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace rmc {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
std::span<T> Node<T>::parent_grad(size_t i) {
  Node& p = *parents[i];
  if (!p.requires_grad) return {};
  if (p.pass_grad.empty()) p.pass_grad.assign(p.data.size(), T(0));
  return p.pass_grad;
}

namespace {

void check_shape(const Shape& shape) {
  for (int64_t e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  check_shape(shape);
  node_->data.assign(static_cast<size_t>(shape_numel(shape)), fill);
  node_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node<T>>()) {
  check_shape(shape);
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  node_->data = std::move(values);
  node_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
int64_t BasicTensor<T>::dim(int axis) const {
  int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("axis out of range for shape " + shape_str(shape()));
  return node_->shape[static_cast<size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single-element tensor, got " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T(0));
  if (!on) node_->grad.clear();
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() const {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_op(Shape shape, std::vector<T> values, const std::vector<BasicTensor>& inputs,
                                       std::function<void(Node<T>&)> backward_fn) {
  BasicTensor out(std::move(shape), std::move(values));
  if (!g_grad_enabled) return out;
  bool any = std::any_of(inputs.begin(), inputs.end(), [](const BasicTensor& t) { return t.requires_grad(); });
  if (!any) return out;
  Node<T>& n = *out.node_;
  n.requires_grad = true;
  n.parents.reserve(inputs.size());
  for (const auto& t : inputs) n.parents.push_back(t.node_);
  n.backward_fn = std::move(backward_fn);
  return out;
}

template <typename T>
void BasicTensor<T>::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(shape()));
  if (!node_->requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS; reversed it is a valid topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->pass_grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->pass_grad.empty()) continue;
    n->backward_fn(*n);
    n->pass_grad.clear();
    n->pass_grad.shrink_to_fit();
  }
  // Each pass is summed separately before touching the accumulator, so two
  // identical passes give exactly twice the single-pass gradient.
  for (Node<T>* n : order) {
    if (!n->is_leaf()) continue;
    if (!n->pass_grad.empty()) {
      if (n->grad.size() != n->data.size()) n->grad.assign(n->data.size(), T(0));
      for (size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->pass_grad[i];
    }
    n->pass_grad.clear();
    n->pass_grad.shrink_to_fit();
  }
}

template struct Node<float>;
template struct Node<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace rmc
