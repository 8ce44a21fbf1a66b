#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prefixgroup/error.hpp"
#include "prefixgroup/memory.hpp"

namespace pg {

using Shape = std::vector<std::size_t>;
using NodeId = std::int64_t;
inline constexpr NodeId kNoNode = -1;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  // Shared so that reshape can alias the same values without a copy.
  std::shared_ptr<Buffer<T>> data;
  Buffer<T> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  Tape<T>* tape = nullptr;
  NodeId node = kNoNode;

  T* ensure_grad() {
    if (grad.empty()) grad.assign(data->size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

// Dense row-major tensor handle. Copies share the underlying node; values are
// immutable once a tensor participates in a tape.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  // Untracked constants.
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::span<const T> values);
  static Tensor from(Shape shape, std::initializer_list<T> values);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return impl_->data->size(); }

  std::span<const T> data() const { return {impl_->data->data(), impl_->data->size()}; }
  // Only valid on untracked tensors.
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool tracked() const { return impl_->tape != nullptr; }
  bool requires_grad() const { return impl_->requires_grad; }
  Tape<T>* tape() const { return impl_->tape; }
  NodeId node() const { return impl_->node; }

  // Empty span until backward has produced a gradient for this tensor.
  std::span<const T> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
  bool has_grad() const { return !impl_->grad.empty(); }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

 private:
  std::shared_ptr<Impl> impl_;
};

// Owns the record of every tracked tensor and operation of one computation
// graph. Nodes are appended as operations execute, so creation order is a
// topological order. A tape and its tensors belong to one thread.
template <typename T>
class Tape {
 public:
  using Impl = detail::TensorImpl<T>;
  using BackwardFn = std::function<void(const Buffer<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<T> leaf(Shape shape, std::span<const T> values, bool requires_grad = true);

  // Reverse sweep from a scalar. Intermediate gradients are released as the
  // sweep passes them unless retain_grad was requested.
  void backward(const Tensor<T>& loss);

  // Clears all gradients so backward may run again.
  void reset();

  void retain_grad(const Tensor<T>& t);

  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }
  std::span<const NodeId> inputs_of(NodeId id) const;
  std::span<const T> gradient(NodeId id) const;

  // Used by operations to append a node. `inputs` are the tracked operands.
  Tensor<T> record(Shape shape, Buffer<T> values, std::vector<std::shared_ptr<Impl>> inputs,
                   bool requires_grad, BackwardFn backward);
  // Same, but the result aliases existing storage.
  Tensor<T> record_view(Shape shape, std::shared_ptr<Buffer<T>> storage,
                        std::vector<std::shared_ptr<Impl>> inputs, bool requires_grad, BackwardFn backward);

 private:
  void sweep(const Tensor<T>& loss);
  Tensor<T> append(std::shared_ptr<Impl> impl, std::vector<std::shared_ptr<Impl>> inputs,
                   bool requires_grad, BackwardFn backward);

  struct Node {
    std::shared_ptr<Impl> output;
    std::vector<std::shared_ptr<Impl>> inputs;
    std::vector<NodeId> input_ids;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Test hook: flips the sign of one operation's backward rule while in scope.
// Lets verification harnesses prove they detect a wrong gradient.
enum class OpKind {
  matmul, add, mul, scale, silu, rmsnorm, embedding, concat, index_select, pad,
  reshape, permute, softmax, log_softmax, gather, sum, rope, attention
};

class BackwardFault {
 public:
  explicit BackwardFault(OpKind op) noexcept;
  ~BackwardFault();
  BackwardFault(const BackwardFault&) = delete;
  BackwardFault& operator=(const BackwardFault&) = delete;

  // -1 for the faulted op, +1 otherwise.
  static double sign(OpKind op) noexcept;

 private:
  int previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace pg
