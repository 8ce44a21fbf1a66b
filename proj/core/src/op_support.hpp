#pragma once

// Helpers shared by the operation implementations. Not installed.

#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "prefixgroup/tensor.hpp"

namespace pg::detail {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

// Collects the tracked operands and either records a node or returns a plain
// constant when no operand is tracked.
template <typename T>
inline Tensor<T> finish(Shape shape, Buffer<T> values, std::initializer_list<const Tensor<T>*> operands,
                 typename Tape<T>::BackwardFn backward) {
  Tape<T>* tape = nullptr;
  bool requires_grad = false;
  std::vector<ImplPtr<T>> tracked;
  for (const Tensor<T>* t : operands) {
    if (!t->tracked()) continue;
    if (tape != nullptr && t->tape() != tape) {
      throw ContractError("operation mixes tensors from different tapes");
    }
    tape = t->tape();
    requires_grad = requires_grad || t->requires_grad();
    tracked.push_back(t->impl());
  }
  if (tape == nullptr) {
    auto impl = std::make_shared<detail::TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<Buffer<T>>(std::move(values));
    return Tensor<T>(std::move(impl));
  }
  return tape->record(std::move(shape), std::move(values), std::move(tracked), requires_grad,
                      std::move(backward));
}

template <typename T>
inline Tensor<T> finish_unary(Shape shape, Buffer<T> values, const Tensor<T>& x,
                       typename Tape<T>::BackwardFn backward) {
  return finish<T>(std::move(shape), std::move(values), {&x}, std::move(backward));
}

template <typename T>
inline T op_sign(OpKind op) {
  return static_cast<T>(BackwardFault::sign(op));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// (outer, axis, inner) factorisation of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t length = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.length = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(shape));
  }
}

}  // namespace pg::detail
