#include "prefixgroup/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pg {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
std::shared_ptr<detail::TensorImpl<T>> make_impl(Shape shape, Buffer<T> values) {
  if (pg::numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<detail::TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::make_shared<Buffer<T>>(std::move(values));
  return impl;
}

thread_local int faulted_op = -1;

}  // namespace

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Buffer<T> values(pg::numel(shape), value);
  return Tensor(make_impl<T>(std::move(shape), std::move(values)));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::span<const T> values) {
  Buffer<T> buf(values.begin(), values.end());
  return Tensor(make_impl<T>(std::move(shape), std::move(buf)));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::initializer_list<T> values) {
  return from(std::move(shape), std::span<const T>(values.begin(), values.size()));
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
  if (axis >= dim()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return impl_->shape[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (tracked()) throw ContractError("cannot mutate the values of a tape-tracked tensor");
  return {impl_->data->data(), impl_->data->size()};
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return (*impl_->data)[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != dim()) throw DimensionError("index rank does not match " + shape_string(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl_->shape[axis]) throw IndexError("index " + std::to_string(i) + " out of range");
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return (*impl_->data)[flat];
}

template <typename T>
Tensor<T> Tape<T>::leaf(Shape shape, std::span<const T> values, bool requires_grad) {
  Buffer<T> buf(values.begin(), values.end());
  auto impl = make_impl<T>(std::move(shape), std::move(buf));
  impl->requires_grad = requires_grad;
  impl->tape = this;
  impl->node = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{impl, {}, {}, nullptr});
  return Tensor<T>(std::move(impl));
}

template <typename T>
Tensor<T> Tape<T>::record(Shape shape, Buffer<T> values, std::vector<std::shared_ptr<Impl>> inputs,
                          bool requires_grad, BackwardFn backward) {
  return append(make_impl<T>(std::move(shape), std::move(values)), std::move(inputs), requires_grad,
                std::move(backward));
}

template <typename T>
Tensor<T> Tape<T>::record_view(Shape shape, std::shared_ptr<Buffer<T>> storage,
                               std::vector<std::shared_ptr<Impl>> inputs, bool requires_grad,
                               BackwardFn backward) {
  if (pg::numel(shape) != storage->size()) {
    throw DimensionError("view shape " + shape_string(shape) + " does not match " +
                         std::to_string(storage->size()) + " values");
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->data = std::move(storage);
  return append(std::move(impl), std::move(inputs), requires_grad, std::move(backward));
}

template <typename T>
Tensor<T> Tape<T>::append(std::shared_ptr<Impl> impl, std::vector<std::shared_ptr<Impl>> inputs,
                          bool requires_grad, BackwardFn backward) {
  impl->requires_grad = requires_grad;
  impl->tape = this;
  impl->node = static_cast<NodeId>(nodes_.size());
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const auto& in : inputs) ids.push_back(in->node);
  nodes_.push_back(Node{impl, std::move(inputs), std::move(ids), requires_grad ? std::move(backward) : nullptr});
  return Tensor<T>(std::move(impl));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (loss.tape() != this) throw ContractError("loss is not recorded on this tape");
  if (backward_done_) throw ContractError("backward already ran on this tape; call reset() first");
  backward_done_ = true;
  if (loss.requires_grad()) sweep(loss);
  // Leaves the loss does not reach still get a (zero) gradient of their shape.
  for (auto& node : nodes_) {
    if (node.inputs.empty() && node.output->requires_grad) node.output->ensure_grad();
  }
}

template <typename T>
void Tape<T>::sweep(const Tensor<T>& loss) {
  auto& root = *loss.impl();
  root.ensure_grad()[0] += T(1);
  for (NodeId id = loss.node(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    Impl& out = *node.output;
    if (out.grad.empty()) continue;
    if (node.backward) {
      node.backward(out.grad);
      if (!out.retain_grad && id != loss.node()) Buffer<T>().swap(out.grad);
    }
  }
}

template <typename T>
void Tape<T>::reset() {
  for (auto& node : nodes_) Buffer<T>().swap(node.output->grad);
  backward_done_ = false;
}

template <typename T>
void Tape<T>::retain_grad(const Tensor<T>& t) {
  if (t.tape() != this) throw ContractError("retain_grad on a tensor from another tape");
  t.impl()->retain_grad = true;
}

template <typename T>
std::span<const NodeId> Tape<T>::inputs_of(NodeId id) const {
  const auto& ids = nodes_.at(static_cast<std::size_t>(id)).input_ids;
  return {ids.data(), ids.size()};
}

template <typename T>
std::span<const T> Tape<T>::gradient(NodeId id) const {
  const auto& g = nodes_.at(static_cast<std::size_t>(id)).output->grad;
  return {g.data(), g.size()};
}

BackwardFault::BackwardFault(OpKind op) noexcept : previous_(faulted_op) {
  faulted_op = static_cast<int>(op);
}

BackwardFault::~BackwardFault() { faulted_op = previous_; }

double BackwardFault::sign(OpKind op) noexcept {
  return faulted_op == static_cast<int>(op) ? -1.0 : 1.0;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace pg
