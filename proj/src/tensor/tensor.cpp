#include "shelfnet/tensor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "shelfnet/errors.hpp"

namespace shelfnet {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

namespace detail {

std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->value = std::move(values);
  node->seq = next_sequence();
  bool needs = false;
  for (const auto* in : inputs) needs = needs || in->requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto* in : inputs) node->inputs.push_back(in->node());
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, std::initializer_list<const Tensor<float>*>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::initializer_list<const Tensor<double>*>,
                                    std::function<void(Node<double>&)>);

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<detail::Node<T>>()) {
  if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
    throw ShapeError("tensor extents must be positive, got " + shape.str());
  node_->shape = shape;
  node_->value.assign(static_cast<std::size_t>(shape.numel()), fill);
  node_->seq = detail::next_sequence();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<detail::Node<T>>()) {
  if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
    throw ShapeError("tensor extents must be positive, got " + shape.str());
  if (static_cast<std::int64_t>(values.size()) != shape.numel())
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
  node_->shape = shape;
  node_->value = std::move(values);
  node_->seq = detail::next_sequence();
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
  if (!node_->is_leaf()) throw UsageError("cannot mutate the output of a recorded op in place");
  return node_->value;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw UsageError("item() on a tensor of shape " + shape().str());
  return node_->value[0];
}

template <typename T>
T Tensor<T>::at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  const Shape& s = node_->shape;
  return node_->value[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw UsageError("requires_grad can only be set on leaves");
  node_->requires_grad = on;
  if (on) node_->ensure_grad();
  return *this;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (has_grad()) return node_->grad;
  return std::vector<T>(node_->value.size(), T(0));
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  if (!loss.requires_grad()) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<NodeT*> stack{loss.node().get()};
  while (!stack.empty()) {
    NodeT* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    order.push_back(node);
    for (const auto& in : node->inputs)
      if (in->requires_grad) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](const NodeT* a, const NodeT* b) { return a->seq > b->seq; });

  for (NodeT* node : order)
    if (!node->is_leaf()) node->grad.clear();
  loss.node()->ensure_grad()[0] += T(1);

  for (NodeT* node : order) {
    if (node->is_leaf() || node->grad.empty()) continue;
    node->backward(*node);
    // Interior gradients are only needed during the sweep.
    if (node != loss.node().get()) std::vector<T>().swap(node->grad);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace shelfnet
