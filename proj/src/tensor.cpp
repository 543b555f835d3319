#include "selfens/tensor.hpp"

#include "selfens/errors.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace selfens {

std::int64_t numel(const Shape &shape) {
  std::int64_t n = 1;
  for (auto d : shape)
    n *= d;
  return n;
}

std::string to_string(const Shape &shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i)
      out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape &shape) {
  for (auto d : shape)
    if (d <= 0)
      throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
}

} // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

template <typename T> BasicTensor<T>::BasicTensor(Shape shape) {
  check_shape(shape);
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->data.assign(static_cast<std::size_t>(selfens::numel(shape)), T{0});
  impl_->shape = std::move(shape);
}

template <typename T> BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) {
  check_shape(shape);
  if (static_cast<std::int64_t>(values.size()) != selfens::numel(shape))
    throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                     std::to_string(selfens::numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  impl_ = std::make_shared<detail::TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename T> BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  BasicTensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <typename T> const Shape &BasicTensor<T>::shape() const {
  if (!impl_)
    throw UsageError("use of an undefined tensor");
  return impl_->shape;
}

template <typename T> std::int64_t BasicTensor<T>::dim(std::size_t axis) const {
  const auto &s = shape();
  if (axis >= s.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[axis];
}

template <typename T> std::int64_t BasicTensor<T>::numel() const {
  return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0);
}

template <typename T> std::span<const T> BasicTensor<T>::data() const {
  if (!impl_)
    return {};
  return impl_->data;
}

template <typename T> std::span<T> BasicTensor<T>::mutable_data() {
  if (!impl_)
    throw UsageError("use of an undefined tensor");
  if (impl_->grad_fn)
    throw UsageError("op results are immutable; only leaf tensors may be written");
  return impl_->data;
}

template <typename T> T BasicTensor<T>::item() const {
  if (numel() != 1)
    throw ShapeError("item() needs a single-element tensor, got shape " + to_string(shape()));
  return impl_->data[0];
}

template <typename T> bool BasicTensor<T>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename T> BasicTensor<T> &BasicTensor<T>::set_requires_grad(bool value) {
  if (!impl_)
    throw UsageError("use of an undefined tensor");
  if (impl_->grad_fn && !value)
    throw UsageError("cannot clear requires_grad on an op result; use detach()");
  impl_->requires_grad = value;
  return *this;
}

template <typename T> bool BasicTensor<T>::is_leaf() const { return !impl_ || !impl_->grad_fn; }

template <typename T> std::string BasicTensor<T>::op_name() const {
  return impl_ && impl_->grad_fn ? impl_->grad_fn->op : std::string{};
}

template <typename T> bool BasicTensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T> std::span<const T> BasicTensor<T>::grad() const {
  if (!impl_)
    return {};
  return impl_->grad;
}

template <typename T> void BasicTensor<T>::zero_grad() {
  if (impl_)
    impl_->grad.clear();
}

template <typename T> BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(shape(), impl_->data);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::make_result(std::string op, Shape shape, std::vector<T> values,
                                           const std::vector<BasicTensor> &inputs,
                                           detail::BackwardFn<T> backward) {
  BasicTensor out(std::move(shape), std::move(values));
  if (!grad_enabled())
    return out;
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const BasicTensor &t) { return t.requires_grad(); });
  if (!needs_grad)
    return out;
  auto node = std::make_shared<detail::Node<T>>();
  node->op = std::move(op);
  node->inputs.reserve(inputs.size());
  for (const auto &t : inputs)
    node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl_->requires_grad = true;
  out.impl_->grad_fn = std::move(node);
  return out;
}

template <typename T> void backward(const BasicTensor<T> &loss) {
  if (!loss.defined())
    throw UsageError("backward on an undefined tensor");
  if (!loss.impl()->grad_fn)
    throw UsageError("backward: tensor of shape " + to_string(loss.shape()) +
                     " is not connected to any recorded op");
  if (loss.numel() != 1)
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));

  using Impl = detail::TensorImpl<T>;
  // Iterative post-order DFS gives a topological order of op results.
  std::vector<Impl *> order;
  std::unordered_set<Impl *> visited;
  std::vector<std::pair<Impl *, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  visited.insert(loss.impl().get());
  while (!stack.empty()) {
    auto &[impl, next] = stack.back();
    const auto &inputs = impl->grad_fn->inputs;
    if (next < inputs.size()) {
      Impl *child = inputs[next++].get();
      if (child->grad_fn && visited.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(impl);
      stack.pop_back();
    }
  }

  Impl *root = loss.impl().get();
  root->grad.assign(1, T{1});
  std::vector<T *> grad_inputs;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl *impl = *it;
    if (impl->grad.empty())
      continue; // nothing flowed into this node
    const auto &node = *impl->grad_fn;
    grad_inputs.clear();
    for (const auto &input : node.inputs) {
      if (!input->requires_grad) {
        grad_inputs.push_back(nullptr);
        continue;
      }
      if (input->grad.empty())
        input->grad.assign(input->data.size(), T{0});
      grad_inputs.push_back(input->grad.data());
    }
    node.backward(impl->grad, grad_inputs);
    // op results keep no gradient between passes
    impl->grad.clear();
    impl->grad.shrink_to_fit();
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template void backward<float>(const BasicTensor<float> &);
template void backward<double>(const BasicTensor<double> &);

} // namespace selfens
