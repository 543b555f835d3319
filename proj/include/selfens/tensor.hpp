#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace selfens {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape &shape);
std::string to_string(const Shape &shape);

template <typename T> class BasicTensor;

namespace detail {

template <typename T> struct Node;

template <typename T> struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  // Empty until the first gradient is accumulated.
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> grad_fn;
};

/// Backward rule of a recorded op. `grad_inputs[i]` points at the gradient
/// buffer of input i (zero-initialized on first use) or is null when that
/// input does not need a gradient. Rules accumulate with +=.
template <typename T>
using BackwardFn = std::function<void(std::span<const T> grad_output,
                                      const std::vector<T *> &grad_inputs)>;

template <typename T> struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  BackwardFn<T> backward;
};

} // namespace detail

/// Dense row-major array with optional reverse-mode gradient tracking.
///
/// Copies share storage; values produced by ops are never modified after
/// construction, only leaf tensors (parameters) are updated in place by the
/// optimizer through mutable_data().
template <typename T> class BasicTensor {
public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape);
  BasicTensor(Shape shape, std::vector<T> values);

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, {value}); }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape &shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  T operator[](std::size_t index) const { return data()[index]; }

  bool requires_grad() const;
  BasicTensor &set_requires_grad(bool value);
  bool is_leaf() const;
  /// Name of the op that produced this tensor, empty for leaves.
  std::string op_name() const;

  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  /// Same values, no graph history.
  BasicTensor detach() const;

  const std::shared_ptr<detail::TensorImpl<T>> &impl() const { return impl_; }

  /// Builds the result of an op. The graph edge is only recorded when
  /// gradient recording is enabled and some input requires a gradient.
  static BasicTensor make_result(std::string op, Shape shape, std::vector<T> values,
                                 const std::vector<BasicTensor> &inputs,
                                 detail::BackwardFn<T> backward);

private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

/// Whether ops on the current thread record graph edges.
bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard &) = delete;
  NoGradGuard &operator=(const NoGradGuard &) = delete;

private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Gradients are accumulated (+=) into
/// every reachable leaf that requires a gradient; intermediate gradients are
/// released once consumed. Calling it twice accumulates twice.
template <typename T> void backward(const BasicTensor<T> &loss);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template void backward<float>(const BasicTensor<float> &);
extern template void backward<double>(const BasicTensor<double> &);

} // namespace selfens
