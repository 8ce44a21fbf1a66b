#pragma once

#include <cstdint>
#include <span>

#include "prefixgroup/layout.hpp"
#include "prefixgroup/ops.hpp"
#include "prefixgroup/tensor.hpp"

namespace pg {

// Additive masks for the two attention calls of the shared-prefix forward.
//   prefix_mask: [L_p, L_p], causal.
//   suffix_mask: [total_suffix, L_p + total_suffix]. A row belonging to
//     response i sees every prefix column and the columns of response i up to
//     and including its own position. Other responses are masked.
template <typename T>
struct AttentionMasks {
  Tensor<T> prefix_mask;
  Tensor<T> suffix_mask;
};

template <typename T>
AttentionMasks<T> build_masks(const GroupLayout& layout);

// [n, n] lower-triangular additive mask.
template <typename T>
Tensor<T> causal_mask(std::size_t n);

// [G, L_p + max L_i, L_p + max L_i] masks for the padded repeated batch: causal,
// and pad keys hidden from every query.
template <typename T>
Tensor<T> repeated_masks(const GroupLayout& layout);

// Rotary embedding on x [b, heads, seq, head_dim]. Channel pairs (2k, 2k+1)
// rotate by pos * theta_base^(-2k / head_dim). `positions` holds either one
// list of `seq` ids shared by every batch row, or b * seq ids.
template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::int64_t> positions, double theta_base);

// softmax(q k^T / sqrt(head_dim) + mask) v with q [b, h, sq, d], k and v
// [b, h, skv, d] and mask [sq, skv] or [b, sq, skv]. Masked pairs are skipped
// entirely: only visible (query, key) pairs are computed, counted, and stored.
// Fully masked query rows produce zeros.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& mask);

template <typename T>
struct UngroupedQkv {
  Tensor<T> q_prefix, k_prefix, v_prefix;
  Tensor<T> q_suffix, k_suffix, v_suffix;
};

// Splits shared-sequence q, k, v [b, h, total, d] into the first L_p positions
// and the remaining responses, via index_select on the sequence axis.
template <typename T>
UngroupedQkv<T> ungroup(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        const GroupLayout& layout);

// Concatenates prefix and suffix parts along `cat_axis`, first repeating a
// batch-1 prefix across the suffix batch. The prefix gradient accumulates once
// per use.
template <typename T>
Tensor<T> batch_repeat_cat(const Tensor<T>& prefix_part, const Tensor<T>& suffix_part, std::size_t cat_axis);

// Inverse of ungroup for the attention outputs: restores shared-sequence order.
template <typename T>
Tensor<T> group(const Tensor<T>& prefix_part, const Tensor<T>& suffix_part, const GroupLayout& layout);

// Two-call attention over the shared sequence. q and k must already carry RoPE
// with shared-mode position ids; masks must come from build_masks(layout).
template <typename T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const GroupLayout& layout, const AttentionMasks<T>& masks);

}  // namespace pg
