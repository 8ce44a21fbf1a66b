#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "prefixgroup/tensor.hpp"

namespace pg {

// Additive-mask sentinel. The most negative finite value stands in for -inf so
// max-subtraction never evaluates inf - inf.
template <typename T>
constexpr T mask_sentinel() {
  return std::numeric_limits<T>::lowest();
}

// True for the sentinel, for -inf, and for anything shifted off the sentinel
// by a finite score.
template <typename T>
constexpr bool is_masked(T v) {
  return v <= std::numeric_limits<T>::lowest() / T(2);
}

// softmax_lastdim rejects NaN input when enabled (the default).
void set_nan_checks(bool enabled) noexcept;
bool nan_checks() noexcept;

// [..., m, k] x [..., k, n] -> [..., m, n]. Leading batch dimensions follow
// broadcasting rules (equal, or 1, or absent on one side).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);

// y = x / sqrt(mean(x^2) + eps) * weight, over the last dimension.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps);

// table [vocab, width]; returns lead_shape + [width].
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int64_t> ids, Shape lead_shape);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Gathers slices along `axis`. Duplicated indices accumulate in backward.
template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, std::span<const std::size_t> indices);

// Extends `axis` to `length` with `fill`. Padded positions receive no gradient.
template <typename T>
Tensor<T> pad_to(const Tensor<T>& x, std::size_t axis, std::size_t length, T fill);

// Zero-copy: the result aliases the input values.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> axes);

// Max-subtracted softmax. Masked entries (see is_masked) produce exactly 0 and
// rows with no unmasked entry produce all zeros.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x);

// x [..., n]; picks x[..., indices[r]] for each leading row r.
template <typename T>
Tensor<T> gather_lastdim(const Tensor<T>& x, std::span<const std::int64_t> indices);

// Sequential sum in index order; returns a 0-d tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

}  // namespace pg
