#include "prefixgroup/attention.hpp"

#include <cmath>
#include <numeric>

#include "prefixgroup/flops.hpp"
#include "op_support.hpp"

namespace pg {

using namespace detail;

template <typename T>
Tensor<T> causal_mask(std::size_t n) {
  Tensor<T> mask = Tensor<T>::full({n, n}, mask_sentinel<T>());
  auto m = mask.mutable_data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = T(0);
  return mask;
}

template <typename T>
AttentionMasks<T> build_masks(const GroupLayout& layout) {
  const std::size_t lp = layout.prefix_len();
  const std::size_t rows = layout.total_suffix();
  const std::size_t cols = layout.total();
  Tensor<T> suffix = Tensor<T>::full({rows, cols}, mask_sentinel<T>());
  auto m = suffix.mutable_data();
  for (std::size_t g = 0; g < layout.group_size(); ++g) {
    const std::size_t begin = layout.suffix_begin(g);
    for (std::size_t t = begin; t < layout.suffix_end(g); ++t) {
      T* row = m.data() + (t - lp) * cols;
      for (std::size_t j = 0; j < lp; ++j) row[j] = T(0);
      for (std::size_t j = begin; j <= t; ++j) row[j] = T(0);
    }
  }
  return {causal_mask<T>(lp), std::move(suffix)};
}

template <typename T>
Tensor<T> repeated_masks(const GroupLayout& layout) {
  const std::size_t g_count = layout.group_size();
  const std::size_t len = layout.padded_len();
  Tensor<T> mask = Tensor<T>::full({g_count, len, len}, mask_sentinel<T>());
  auto m = mask.mutable_data();
  for (std::size_t g = 0; g < g_count; ++g) {
    const std::size_t real = layout.prefix_len() + layout.suffix_len(g);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j <= i && j < real; ++j) m[(g * len + i) * len + j] = T(0);
  }
  return mask;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> apply_rope(const Tensor<T>& x, std::span<const std::int64_t> positions, double theta_base) {
  require(x.dim() == 4, "apply_rope expects [b, heads, seq, head_dim], got " + shape_string(x.shape()));
  const std::size_t batch = x.size(0), heads = x.size(1), seq = x.size(2), hd = x.size(3);
  if (hd % 2 != 0) throw ConfigError("apply_rope: head_dim " + std::to_string(hd) + " is odd");
  const bool per_row = positions.size() == batch * seq && batch != 1;
  if (positions.size() != seq && !per_row) {
    throw DimensionError("apply_rope: " + std::to_string(positions.size()) + " position ids for seq " +
                         std::to_string(seq) + " and batch " + std::to_string(batch));
  }
  const std::size_t half = hd / 2;
  const std::size_t pos_rows = per_row ? batch * seq : seq;
  auto cos_t = std::make_shared<Buffer<T>>(pos_rows * half);
  auto sin_t = std::make_shared<Buffer<T>>(pos_rows * half);
  for (std::size_t r = 0; r < pos_rows; ++r) {
    for (std::size_t kk = 0; kk < half; ++kk) {
      const double inv_freq = std::pow(theta_base, -2.0 * static_cast<double>(kk) / static_cast<double>(hd));
      const double angle = static_cast<double>(positions[r]) * inv_freq;
      (*cos_t)[r * half + kk] = static_cast<T>(std::cos(angle));
      (*sin_t)[r * half + kk] = static_cast<T>(std::sin(angle));
    }
  }
  auto pos_row = [per_row, seq](std::size_t b, std::size_t t) { return per_row ? b * seq + t : t; };

  Buffer<T> out(x.numel());
  auto src = x.data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < seq; ++t) {
        const std::size_t base = ((b * heads + h) * seq + t) * hd;
        const std::size_t pr = pos_row(b, t) * half;
        for (std::size_t kk = 0; kk < half; ++kk) {
          const T c = (*cos_t)[pr + kk], s = (*sin_t)[pr + kk];
          const T x0 = src[base + 2 * kk], x1 = src[base + 2 * kk + 1];
          out[base + 2 * kk] = x0 * c - x1 * s;
          out[base + 2 * kk + 1] = x0 * s + x1 * c;
        }
      }
  count_flops(FlopKind::elementwise, 3 * x.numel());
  auto ix = x.impl();
  return finish_unary<T>(x.shape(), std::move(out), x,
                         [ix, cos_t, sin_t, batch, heads, seq, hd, half, pos_row](const Buffer<T>& g) {
                           const T sign = op_sign<T>(OpKind::rope);
                           T* gx = ix->ensure_grad();
                           for (std::size_t b = 0; b < batch; ++b)
                             for (std::size_t h = 0; h < heads; ++h)
                               for (std::size_t t = 0; t < seq; ++t) {
                                 const std::size_t base = ((b * heads + h) * seq + t) * hd;
                                 const std::size_t pr = pos_row(b, t) * half;
                                 for (std::size_t kk = 0; kk < half; ++kk) {
                                   const T c = (*cos_t)[pr + kk], s = (*sin_t)[pr + kk];
                                   const T g0 = g[base + 2 * kk], g1 = g[base + 2 * kk + 1];
                                   gx[base + 2 * kk] += sign * (g0 * c + g1 * s);
                                   gx[base + 2 * kk + 1] += sign * (g1 * c - g0 * s);
                                 }
                               }
                         });
}

// ---------------------------------------------------------------------------

namespace {

// Visible key columns of every mask row, in increasing column order.
struct VisibleColumns {
  Buffer<std::size_t> row_ptr;
  Buffer<std::uint32_t> cols;
};

template <typename T>
VisibleColumns visible_columns(const Tensor<T>& mask) {
  const std::size_t skv = mask.shape().back();
  const std::size_t rows = mask.numel() / skv;
  VisibleColumns vis;
  vis.row_ptr.resize(rows + 1, 0);
  auto m = mask.data();
  std::size_t nnz = 0;
  for (std::size_t e = 0; e < m.size(); ++e) nnz += is_masked(m[e]) ? 0 : 1;
  vis.cols.reserve(nnz);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < skv; ++j)
      if (!is_masked(m[r * skv + j])) vis.cols.push_back(static_cast<std::uint32_t>(j));
    vis.row_ptr[r + 1] = vis.cols.size();
  }
  return vis;
}

}  // namespace

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const Tensor<T>& mask) {
  const std::string shapes = "q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                             shape_string(v.shape()) + ", mask " + shape_string(mask.shape());
  require(q.dim() == 4 && k.dim() == 4 && v.dim() == 4, "causal_attention expects rank-4 q/k/v: " + shapes);
  const std::size_t batch = q.size(0), heads = q.size(1), sq = q.size(2), hd = q.size(3);
  const std::size_t skv = k.size(2);
  require(k.size(0) == batch && v.size(0) == batch && k.size(1) == heads && v.size(1) == heads,
          "causal_attention: batch/head dimensions differ: " + shapes);
  require(k.size(3) == hd && v.size(3) == hd && v.size(2) == skv,
          "causal_attention: head_dim or key length differ: " + shapes);
  const bool batched_mask = mask.dim() == 3;
  require((mask.dim() == 2 || (batched_mask && mask.size(0) == batch)) &&
              mask.shape()[mask.dim() - 2] == sq && mask.shape().back() == skv,
          "causal_attention: mask shape does not match: " + shapes);
  if (mask.tracked()) throw ContractError("attention masks must be constants");

  auto vis = std::make_shared<VisibleColumns>(visible_columns(mask));
  const std::size_t mask_nnz = batched_mask ? 0 : vis->cols.size();
  // First probability slot of each (b, h) block.
  std::vector<std::size_t> block(batch * heads + 1, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t nnz = batched_mask ? vis->row_ptr[(b + 1) * sq] - vis->row_ptr[b * sq] : mask_nnz;
    for (std::size_t h = 0; h < heads; ++h) block[b * heads + h + 1] = block[b * heads + h] + nnz;
  }
  auto probs = std::make_shared<Buffer<T>>(block.back());
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  auto qd = q.data(), kd = k.data(), vd = v.data(), md = mask.data();
  Buffer<T> out(batch * heads * sq * hd, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t mrow0 = batched_mask ? b * sq : 0;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t bh = b * heads + h;
      const T* Q = qd.data() + bh * sq * hd;
      const T* K = kd.data() + bh * skv * hd;
      const T* V = vd.data() + bh * skv * hd;
      T* O = out.data() + bh * sq * hd;
      for (std::size_t i = 0; i < sq; ++i) {
        const std::size_t r = mrow0 + i;
        const std::size_t lo = vis->row_ptr[r], hi = vis->row_ptr[r + 1];
        if (lo == hi) continue;
        T* p = probs->data() + block[bh] + (lo - vis->row_ptr[mrow0]);
        T mx = T(0);
        for (std::size_t e = lo; e < hi; ++e) {
          const std::size_t j = vis->cols[e];
          T s = T(0);
          for (std::size_t c = 0; c < hd; ++c) s += Q[i * hd + c] * K[j * hd + c];
          s = s * scale + md[r * skv + j];
          p[e - lo] = s;
          mx = e == lo ? s : std::max(mx, s);
        }
        T total = T(0);
        for (std::size_t e = 0; e < hi - lo; ++e) {
          p[e] = std::exp(p[e] - mx);
          total += p[e];
        }
        for (std::size_t e = 0; e < hi - lo; ++e) p[e] /= total;
        for (std::size_t e = lo; e < hi; ++e) {
          const T w = p[e - lo];
          const T* vrow = V + static_cast<std::size_t>(vis->cols[e]) * hd;
          for (std::size_t c = 0; c < hd; ++c) O[i * hd + c] += w * vrow[c];
        }
      }
    }
  }
  // Score and mixing products, 2 FLOPs per multiply-accumulate over visible pairs.
  count_flops(FlopKind::attention, 4ull * hd * block.back());
  count_flops(FlopKind::elementwise, 3ull * block.back());

  auto iq = q.impl(), ik = k.impl(), iv = v.impl();
  return finish<T>(
      {batch, heads, sq, hd}, std::move(out), {&q, &k, &v},
      [iq, ik, iv, vis, probs, block = std::move(block), batch, heads, sq, skv, hd, scale,
       batched_mask](const Buffer<T>& g) {
        const T sign = op_sign<T>(OpKind::attention);
        const T* qd = iq->data->data();
        const T* kd = ik->data->data();
        const T* vd = iv->data->data();
        T* gq = iq->requires_grad ? iq->ensure_grad() : nullptr;
        T* gk = ik->requires_grad ? ik->ensure_grad() : nullptr;
        T* gv = iv->requires_grad ? iv->ensure_grad() : nullptr;
        std::vector<T> dp;
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t mrow0 = batched_mask ? b * sq : 0;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t bh = b * heads + h;
            const T* Q = qd + bh * sq * hd;
            const T* K = kd + bh * skv * hd;
            const T* V = vd + bh * skv * hd;
            const T* G = g.data() + bh * sq * hd;
            for (std::size_t i = 0; i < sq; ++i) {
              const std::size_t r = mrow0 + i;
              const std::size_t lo = vis->row_ptr[r], hi = vis->row_ptr[r + 1];
              if (lo == hi) continue;
              const T* p = probs->data() + block[bh] + (lo - vis->row_ptr[mrow0]);
              dp.assign(hi - lo, T(0));
              T weighted = T(0);
              for (std::size_t e = lo; e < hi; ++e) {
                const T* vrow = V + static_cast<std::size_t>(vis->cols[e]) * hd;
                T acc = T(0);
                for (std::size_t c = 0; c < hd; ++c) acc += G[i * hd + c] * vrow[c];
                dp[e - lo] = acc;
                weighted += p[e - lo] * acc;
              }
              for (std::size_t e = lo; e < hi; ++e) {
                const std::size_t j = vis->cols[e];
                const T pe = p[e - lo];
                const T ds = sign * pe * (dp[e - lo] - weighted) * scale;
                if (gv != nullptr) {
                  T* dst = gv + (bh * skv + j) * hd;
                  for (std::size_t c = 0; c < hd; ++c) dst[c] += sign * pe * G[i * hd + c];
                }
                if (gq != nullptr) {
                  T* dst = gq + (bh * sq + i) * hd;
                  for (std::size_t c = 0; c < hd; ++c) dst[c] += ds * K[j * hd + c];
                }
                if (gk != nullptr) {
                  T* dst = gk + (bh * skv + j) * hd;
                  for (std::size_t c = 0; c < hd; ++c) dst[c] += ds * Q[i * hd + c];
                }
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename T>
UngroupedQkv<T> ungroup(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                        const GroupLayout& layout) {
  for (const Tensor<T>* t : {&q, &k, &v}) {
    require(t->dim() == 4 && t->size(2) == layout.total(),
            "ungroup: tensor " + shape_string(t->shape()) + " does not span layout " + layout.to_string());
  }
  std::vector<std::size_t> prefix(layout.prefix_len());
  std::iota(prefix.begin(), prefix.end(), std::size_t{0});
  std::vector<std::size_t> suffix(layout.total_suffix());
  std::iota(suffix.begin(), suffix.end(), layout.prefix_len());
  return {index_select(q, 2, prefix), index_select(k, 2, prefix), index_select(v, 2, prefix),
          index_select(q, 2, suffix), index_select(k, 2, suffix), index_select(v, 2, suffix)};
}

template <typename T>
Tensor<T> batch_repeat_cat(const Tensor<T>& prefix_part, const Tensor<T>& suffix_part,
                           std::size_t cat_axis) {
  if (cat_axis >= prefix_part.dim() || cat_axis >= suffix_part.dim() || cat_axis == 0) {
    throw DimensionError("batch_repeat_cat: axis " + std::to_string(cat_axis) + " invalid for " +
                         shape_string(prefix_part.shape()) + " and " + shape_string(suffix_part.shape()));
  }
  const std::size_t batch = suffix_part.size(0);
  if (prefix_part.size(0) == 1 && batch > 1) {
    const std::vector<std::size_t> repeat(batch, 0);
    return concat<T>({index_select(prefix_part, 0, repeat), suffix_part}, cat_axis);
  }
  return concat<T>({prefix_part, suffix_part}, cat_axis);
}

template <typename T>
Tensor<T> group(const Tensor<T>& prefix_part, const Tensor<T>& suffix_part, const GroupLayout& layout) {
  require(prefix_part.dim() == 4 && suffix_part.dim() == 4 && prefix_part.size(2) == layout.prefix_len() &&
              suffix_part.size(2) == layout.total_suffix(),
          "group: parts " + shape_string(prefix_part.shape()) + " and " + shape_string(suffix_part.shape()) +
              " do not match layout " + layout.to_string());
  // Prefix rows then response rows is already the shared-sequence order.
  return concat<T>({prefix_part, suffix_part}, 2);
}

template <typename T>
Tensor<T> grouped_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                            const GroupLayout& layout, const AttentionMasks<T>& masks) {
  auto parts = ungroup(q, k, v, layout);
  Tensor<T> prefix_out = causal_attention(parts.q_prefix, parts.k_prefix, parts.v_prefix, masks.prefix_mask);
  Tensor<T> suffix_out =
      causal_attention(parts.q_suffix, batch_repeat_cat(parts.k_prefix, parts.k_suffix, 2),
                       batch_repeat_cat(parts.v_prefix, parts.v_suffix, 2), masks.suffix_mask);
  return group(prefix_out, suffix_out, layout);
}

#define PG_INSTANTIATE_ATTENTION(T)                                                                  \
  template Tensor<T> causal_mask<T>(std::size_t);                                                    \
  template AttentionMasks<T> build_masks<T>(const GroupLayout&);                                     \
  template Tensor<T> repeated_masks<T>(const GroupLayout&);                                          \
  template Tensor<T> apply_rope(const Tensor<T>&, std::span<const std::int64_t>, double);           \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                      const Tensor<T>&);                                             \
  template UngroupedQkv<T> ungroup(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                   const GroupLayout&);                                              \
  template Tensor<T> batch_repeat_cat(const Tensor<T>&, const Tensor<T>&, std::size_t);              \
  template Tensor<T> group(const Tensor<T>&, const Tensor<T>&, const GroupLayout&);                  \
  template Tensor<T> grouped_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                       const GroupLayout&, const AttentionMasks<T>&);

PG_INSTANTIATE_ATTENTION(float)
PG_INSTANTIATE_ATTENTION(double)

#undef PG_INSTANTIATE_ATTENTION

}  // namespace pg
