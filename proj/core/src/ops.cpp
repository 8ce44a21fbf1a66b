#include "prefixgroup/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prefixgroup/flops.hpp"
#include "op_support.hpp"

namespace pg {

namespace {
thread_local bool nan_checks_enabled = true;
}  // namespace

using namespace detail;

void set_nan_checks(bool enabled) noexcept { nan_checks_enabled = enabled; }
bool nan_checks() noexcept { return nan_checks_enabled; }

// ---------------------------------------------------------------------------
// matmul

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::string shapes = shape_string(sa) + " and " + shape_string(sb);
  require(sa.size() >= 2 && sb.size() >= 2, "matmul needs rank >= 2 operands, got " + shapes);
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t n = sb[sb.size() - 1];
  require(sb[sb.size() - 2] == k, "matmul inner dimensions differ: " + shapes);

  const std::size_t rank_a = sa.size() - 2;
  const std::size_t rank_b = sb.size() - 2;
  const std::size_t rank = std::max(rank_a, rank_b);
  Shape batch(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + rank_a >= rank ? sa[i + rank_a - rank] : 1;
    const std::size_t db = i + rank_b >= rank ? sb[i + rank_b - rank] : 1;
    require(da == db || da == 1 || db == 1, "matmul batch dimensions do not broadcast: " + shapes);
    batch[i] = std::max(da, db);
  }

  // Offsets (in matrices) of each broadcast batch element within a and b.
  const std::size_t batches = numel(batch);
  std::vector<std::size_t> off_a(batches), off_b(batches);
  for (std::size_t bi = 0; bi < batches; ++bi) {
    std::size_t rem = bi;
    std::size_t ia = 0, ib = 0, stride_a = 1, stride_b = 1;
    for (std::size_t r = rank; r-- > 0;) {
      const std::size_t idx = rem % batch[r];
      rem /= batch[r];
      if (r + rank_a >= rank) {
        const std::size_t d = sa[r + rank_a - rank];
        if (d != 1) ia += idx * stride_a;
        stride_a *= d;
      }
      if (r + rank_b >= rank) {
        const std::size_t d = sb[r + rank_b - rank];
        if (d != 1) ib += idx * stride_b;
        stride_b *= d;
      }
    }
    off_a[bi] = ia * m * k;
    off_b[bi] = ib * k * n;
  }

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Buffer<T> out(batches * m * n, T(0));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  for (std::size_t bi = 0; bi < batches; ++bi) {
    const T* A = pa + off_a[bi];
    const T* B = pb + off_b[bi];
    T* C = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = A[i * k + kk];
        const T* brow = B + kk * n;
        T* crow = C + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  count_flops(FlopKind::projection, 2ull * batches * m * n * k);

  auto ia = a.impl();
  auto ib = b.impl();
  return finish<T>(std::move(out_shape), std::move(out), {&a, &b},
                   [ia, ib, m, n, k, batches, off_a, off_b](const Buffer<T>& g) {
                     const T s = op_sign<T>(OpKind::matmul);
                     const T* A = ia->data->data();
                     const T* B = ib->data->data();
                     T* gA = ia->requires_grad ? ia->ensure_grad() : nullptr;
                     T* gB = ib->requires_grad ? ib->ensure_grad() : nullptr;
                     for (std::size_t bi = 0; bi < batches; ++bi) {
                       const T* G = g.data() + bi * m * n;
                       if (gA != nullptr) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             T acc = T(0);
                             const T* brow = B + off_b[bi] + kk * n;
                             for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * brow[j];
                             gA[off_a[bi] + i * k + kk] += s * acc;
                           }
                       }
                       if (gB != nullptr) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const T aik = s * A[off_a[bi] + i * k + kk];
                             T* gbrow = gB + off_b[bi] + kk * n;
                             for (std::size_t j = 0; j < n; ++j) gbrow[j] += aik * G[i * n + j];
                           }
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "add: shapes differ: " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Buffer<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  count_flops(FlopKind::elementwise, out.size());
  auto ia = a.impl();
  auto ib = b.impl();
  return finish<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::add);
    for (auto* p : {ia.get(), ib.get()}) {
      if (!p->requires_grad) continue;
      T* gp = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += s * g[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(),
          "mul: shapes differ: " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
  Buffer<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  count_flops(FlopKind::elementwise, out.size());
  auto ia = a.impl();
  auto ib = b.impl();
  return finish<T>(a.shape(), std::move(out), {&a, &b}, [ia, ib](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::mul);
    const T* va = ia->data->data();
    const T* vb = ib->data->data();
    if (ia->requires_grad) {
      T* ga = ia->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i] * vb[i];
    }
    if (ib->requires_grad) {
      T* gb = ib->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += s * g[i] * va[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Buffer<T> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] * factor;
  count_flops(FlopKind::elementwise, out.size());
  auto ix = x.impl();
  return finish_unary<T>(x.shape(), std::move(out), x, [ix, factor](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::scale);
    T* gx = ix->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i] * factor;
  });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Buffer<T> out(x.numel());
  auto dx = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dx[i] / (T(1) + std::exp(-dx[i]));
  count_flops(FlopKind::elementwise, 4 * out.size());
  auto ix = x.impl();
  return finish_unary<T>(x.shape(), std::move(out), x, [ix](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::silu);
    const T* v = ix->data->data();
    T* gx = ix->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-v[i]));
      gx[i] += s * g[i] * sig * (T(1) + v[i] * (T(1) - sig));
    }
  });
}

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& weight, T eps) {
  require(x.dim() >= 1 && weight.dim() == 1 && weight.size(0) == x.shape().back(),
          "rmsnorm: weight " + shape_string(weight.shape()) + " does not match input " +
              shape_string(x.shape()));
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  Buffer<T> out(x.numel());
  Buffer<T> inv_rms(rows);
  auto dx = x.data();
  auto w = weight.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = dx.data() + r * width;
    T ms = T(0);
    for (std::size_t j = 0; j < width; ++j) ms += row[j] * row[j];
    ms /= static_cast<T>(width);
    const T inv = T(1) / std::sqrt(ms + eps);
    inv_rms[r] = inv;
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = row[j] * inv * w[j];
  }
  count_flops(FlopKind::elementwise, 4 * x.numel());
  auto ix = x.impl();
  auto iw = weight.impl();
  return finish<T>(x.shape(), std::move(out), {&x, &weight},
                   [ix, iw, width, rows, inv_rms = std::move(inv_rms)](const Buffer<T>& g) {
                     const T s = op_sign<T>(OpKind::rmsnorm);
                     const T* v = ix->data->data();
                     const T* w = iw->data->data();
                     T* gx = ix->requires_grad ? ix->ensure_grad() : nullptr;
                     T* gw = iw->requires_grad ? iw->ensure_grad() : nullptr;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* row = v + r * width;
                       const T* grow = g.data() + r * width;
                       const T inv = inv_rms[r];
                       if (gw != nullptr) {
                         for (std::size_t j = 0; j < width; ++j) gw[j] += s * grow[j] * row[j] * inv;
                       }
                       if (gx != nullptr) {
                         T dot = T(0);
                         for (std::size_t j = 0; j < width; ++j) dot += grow[j] * w[j] * row[j];
                         const T c = inv * inv * inv / static_cast<T>(width) * dot;
                         for (std::size_t j = 0; j < width; ++j) {
                           gx[r * width + j] += s * (grow[j] * w[j] * inv - row[j] * c);
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int64_t> ids, Shape lead_shape) {
  require(table.dim() == 2, "embedding_lookup: table must be 2-d, got " + shape_string(table.shape()));
  require(numel(lead_shape) == ids.size(),
          "embedding_lookup: " + std::to_string(ids.size()) + " ids for lead shape " +
              shape_string(lead_shape));
  const std::size_t vocab = table.size(0);
  const std::size_t width = table.size(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
  }
  Buffer<T> out(ids.size() * width);
  auto tv = table.data();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * width, width, out.data() + r * width);
  }
  Shape shape = std::move(lead_shape);
  shape.push_back(width);
  auto it = table.impl();
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return finish_unary<T>(std::move(shape), std::move(out), table,
                         [it, width, saved = std::move(saved)](const Buffer<T>& g) {
                           const T s = op_sign<T>(OpKind::embedding);
                           T* gt = it->ensure_grad();
                           for (std::size_t r = 0; r < saved.size(); ++r) {
                             T* dst = gt + static_cast<std::size_t>(saved[r]) * width;
                             for (std::size_t j = 0; j < width; ++j) dst[j] += s * g[r * width + j];
                           }
                         });
}

// ---------------------------------------------------------------------------
// structural

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  check_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    require(probe.size() == first.size(), "concat: rank mismatch " + shape_string(first) + " and " +
                                              shape_string(probe));
    for (std::size_t i = 0; i < probe.size(); ++i) {
      require(i == axis || probe[i] == first[i],
              "concat: shapes " + shape_string(first) + " and " + shape_string(probe) +
                  " differ off axis " + std::to_string(axis));
    }
    out_shape[axis] += probe[axis];
  }
  const AxisSplit os = split_at(out_shape, axis);
  Buffer<T> out(numel(out_shape));
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    auto src = p.data();
    for (std::size_t o = 0; o < os.outer; ++o) {
      std::copy_n(src.data() + o * len * os.inner, len * os.inner,
                  out.data() + (o * os.length + start) * os.inner);
    }
    starts.push_back(start);
    start += len;
  }

  Tape<T>* tape = nullptr;
  bool requires_grad = false;
  std::vector<ImplPtr<T>> impls;
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    if (!p.tracked()) continue;
    if (tape != nullptr && p.tape() != tape) throw ContractError("concat mixes tensors from different tapes");
    tape = p.tape();
    requires_grad = requires_grad || p.requires_grad();
  }
  if (tape == nullptr) return finish<T>(std::move(out_shape), std::move(out), {}, nullptr);
  std::vector<ImplPtr<T>> tracked;
  for (const auto& p : parts)
    if (p.tracked()) tracked.push_back(p.impl());
  return tape->record(std::move(out_shape), std::move(out), std::move(tracked), requires_grad,
                      [impls, starts, os, axis](const Buffer<T>& g) {
                        const T s = op_sign<T>(OpKind::concat);
                        for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                          auto& p = *impls[pi];
                          if (!p.requires_grad) continue;
                          const std::size_t len = p.shape[axis];
                          T* gp = p.ensure_grad();
                          for (std::size_t o = 0; o < os.outer; ++o) {
                            const T* src = g.data() + (o * os.length + starts[pi]) * os.inner;
                            T* dst = gp + o * len * os.inner;
                            for (std::size_t e = 0; e < len * os.inner; ++e) dst[e] += s * src[e];
                          }
                        }
                      });
}

template <typename T>
Tensor<T> index_select(const Tensor<T>& x, std::size_t axis, std::span<const std::size_t> indices) {
  check_axis(x.shape(), axis, "index_select");
  const AxisSplit xs = split_at(x.shape(), axis);
  for (auto idx : indices) {
    if (idx >= xs.length) {
      throw IndexError("index_select: index " + std::to_string(idx) + " out of range for axis " +
                       std::to_string(axis) + " of " + shape_string(x.shape()));
    }
  }
  Shape out_shape = x.shape();
  out_shape[axis] = indices.size();
  const std::size_t count = indices.size();
  Buffer<T> out(xs.outer * count * xs.inner);
  auto src = x.data();
  for (std::size_t o = 0; o < xs.outer; ++o)
    for (std::size_t i = 0; i < count; ++i)
      std::copy_n(src.data() + (o * xs.length + indices[i]) * xs.inner, xs.inner,
                  out.data() + (o * count + i) * xs.inner);
  auto ix = x.impl();
  std::vector<std::size_t> saved(indices.begin(), indices.end());
  return finish_unary<T>(std::move(out_shape), std::move(out), x,
                         [ix, xs, saved = std::move(saved)](const Buffer<T>& g) {
                           const T s = op_sign<T>(OpKind::index_select);
                           T* gx = ix->ensure_grad();
                           const std::size_t count = saved.size();
                           for (std::size_t o = 0; o < xs.outer; ++o)
                             for (std::size_t i = 0; i < count; ++i) {
                               const T* src = g.data() + (o * count + i) * xs.inner;
                               T* dst = gx + (o * xs.length + saved[i]) * xs.inner;
                               for (std::size_t e = 0; e < xs.inner; ++e) dst[e] += s * src[e];
                             }
                         });
}

template <typename T>
Tensor<T> pad_to(const Tensor<T>& x, std::size_t axis, std::size_t length, T fill) {
  check_axis(x.shape(), axis, "pad_to");
  const AxisSplit xs = split_at(x.shape(), axis);
  if (length < xs.length) {
    throw DimensionError("pad_to: target length " + std::to_string(length) + " shorter than axis " +
                         std::to_string(axis) + " of " + shape_string(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Buffer<T> out(xs.outer * length * xs.inner, fill);
  auto src = x.data();
  for (std::size_t o = 0; o < xs.outer; ++o)
    std::copy_n(src.data() + o * xs.length * xs.inner, xs.length * xs.inner,
                out.data() + o * length * xs.inner);
  auto ix = x.impl();
  return finish_unary<T>(std::move(out_shape), std::move(out), x, [ix, xs, length](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::pad);
    T* gx = ix->ensure_grad();
    for (std::size_t o = 0; o < xs.outer; ++o)
      for (std::size_t e = 0; e < xs.length * xs.inner; ++e)
        gx[o * xs.length * xs.inner + e] += s * g[o * length * xs.inner + e];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(numel(shape) == x.numel(),
          "reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  auto ix = x.impl();
  if (!x.tracked()) {
    auto impl = std::make_shared<detail::TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = ix->data;
    return Tensor<T>(std::move(impl));
  }
  return x.tape()->record_view(std::move(shape), ix->data, {ix}, x.requires_grad(),
                               [ix](const Buffer<T>& g) {
                                 const T s = op_sign<T>(OpKind::reshape);
                                 T* gx = ix->ensure_grad();
                                 for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
                               });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> axes) {
  const Shape& in = x.shape();
  require(axes.size() == in.size(), "permute: " + std::to_string(axes.size()) + " axes for shape " +
                                        shape_string(in));
  std::vector<bool> seen(in.size(), false);
  for (auto a : axes) {
    require(a < in.size() && !seen[a], "permute: invalid axis order for shape " + shape_string(in));
    seen[a] = true;
  }
  const std::size_t rank = in.size();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[axes[i]];
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in[i];
  // Stride in the input for each output axis.
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) src_stride[i] = in_strides[axes[i]];

  const std::size_t total = x.numel();
  std::vector<std::size_t> source(total);
  {
    std::vector<std::size_t> idx(rank, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < rank; ++i) off += idx[i] * src_stride[i];
      source[flat] = off;
      for (std::size_t i = rank; i-- > 0;) {
        if (++idx[i] < out_shape[i]) break;
        idx[i] = 0;
      }
    }
  }
  Buffer<T> out(total);
  auto src = x.data();
  for (std::size_t i = 0; i < total; ++i) out[i] = src[source[i]];
  auto ix = x.impl();
  return finish_unary<T>(std::move(out_shape), std::move(out), x,
                         [ix, source = std::move(source)](const Buffer<T>& g) {
                           const T s = op_sign<T>(OpKind::permute);
                           T* gx = ix->ensure_grad();
                           for (std::size_t i = 0; i < g.size(); ++i) gx[source[i]] += s * g[i];
                         });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  require(x.dim() >= 1 && x.shape().back() >= 1,
          "softmax_lastdim: last dimension must be >= 1, got " + shape_string(x.shape()));
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto v = x.data();
  if (nan_checks_enabled) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (std::isnan(v[i])) throw NumericError("softmax_lastdim: NaN input at flat index " + std::to_string(i));
    }
  }
  Buffer<T> out(x.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * width;
    T* o = out.data() + r * width;
    T mx = mask_sentinel<T>();
    bool any = false;
    for (std::size_t j = 0; j < width; ++j) {
      if (is_masked(row[j])) continue;
      mx = any ? std::max(mx, row[j]) : row[j];
      any = true;
    }
    if (!any) continue;
    T total = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      if (is_masked(row[j])) continue;
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= total;
  }
  count_flops(FlopKind::elementwise, 3 * x.numel());
  auto ix = x.impl();
  // The output values are needed in backward; share them with the result.
  auto probs = std::make_shared<Buffer<T>>(out);
  return finish_unary<T>(x.shape(), std::move(out), x, [ix, probs, width, rows](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::softmax);
    T* gx = ix->ensure_grad();
    const T* p = probs->data();
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = T(0);
      for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * p[r * width + j];
      for (std::size_t j = 0; j < width; ++j) {
        const std::size_t e = r * width + j;
        gx[e] += s * p[e] * (g[e] - dot);
      }
    }
  });
}

template <typename T>
Tensor<T> log_softmax_lastdim(const Tensor<T>& x) {
  require(x.dim() >= 1 && x.shape().back() >= 1,
          "log_softmax_lastdim: last dimension must be >= 1, got " + shape_string(x.shape()));
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  auto v = x.data();
  Buffer<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = v.data() + r * width;
    const T mx = *std::max_element(row, row + width);
    T total = T(0);
    for (std::size_t j = 0; j < width; ++j) total += std::exp(row[j] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = row[j] - lse;
  }
  count_flops(FlopKind::elementwise, 3 * x.numel());
  auto ix = x.impl();
  auto logp = std::make_shared<Buffer<T>>(out);
  return finish_unary<T>(x.shape(), std::move(out), x, [ix, logp, width, rows](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::log_softmax);
    T* gx = ix->ensure_grad();
    const T* lp = logp->data();
    for (std::size_t r = 0; r < rows; ++r) {
      T total = T(0);
      for (std::size_t j = 0; j < width; ++j) total += g[r * width + j];
      for (std::size_t j = 0; j < width; ++j) {
        const std::size_t e = r * width + j;
        gx[e] += s * (g[e] - std::exp(lp[e]) * total);
      }
    }
  });
}

template <typename T>
Tensor<T> gather_lastdim(const Tensor<T>& x, std::span<const std::int64_t> indices) {
  require(x.dim() >= 1, "gather_lastdim on a 0-d tensor");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / width;
  require(indices.size() == rows, "gather_lastdim: " + std::to_string(indices.size()) +
                                      " indices for " + std::to_string(rows) + " rows of " +
                                      shape_string(x.shape()));
  for (auto idx : indices) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= width) {
      throw IndexError("gather_lastdim: index " + std::to_string(idx) + " out of range " +
                       std::to_string(width));
    }
  }
  Buffer<T> out(rows);
  auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) out[r] = v[r * width + static_cast<std::size_t>(indices[r])];
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  auto ix = x.impl();
  std::vector<std::int64_t> saved(indices.begin(), indices.end());
  return finish_unary<T>(std::move(shape), std::move(out), x,
                         [ix, width, saved = std::move(saved)](const Buffer<T>& g) {
                           const T s = op_sign<T>(OpKind::gather);
                           T* gx = ix->ensure_grad();
                           for (std::size_t r = 0; r < saved.size(); ++r)
                             gx[r * width + static_cast<std::size_t>(saved[r])] += s * g[r];
                         });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  Buffer<T> out(1, total);
  auto ix = x.impl();
  return finish_unary<T>({}, std::move(out), x, [ix](const Buffer<T>& g) {
    const T s = op_sign<T>(OpKind::sum);
    T* gx = ix->ensure_grad();
    for (std::size_t i = 0; i < ix->data->size(); ++i) gx[i] += s * g[0];
  });
}

#define PG_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> silu(const Tensor<T>&);                                                      \
  template Tensor<T> rmsnorm(const Tensor<T>&, const Tensor<T>&, T);                              \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const std::int64_t>, Shape);    \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                          \
  template Tensor<T> index_select(const Tensor<T>&, std::size_t, std::span<const std::size_t>);   \
  template Tensor<T> pad_to(const Tensor<T>&, std::size_t, std::size_t, T);                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> permute(const Tensor<T>&, std::span<const std::size_t>);                     \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                           \
  template Tensor<T> log_softmax_lastdim(const Tensor<T>&);                                       \
  template Tensor<T> gather_lastdim(const Tensor<T>&, std::span<const std::int64_t>);             \
  template Tensor<T> sum(const Tensor<T>&);

PG_INSTANTIATE_OPS(float)
PG_INSTANTIATE_OPS(double)

#undef PG_INSTANTIATE_OPS

}  // namespace pg
