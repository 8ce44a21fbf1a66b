#include "prefixgroup/model.hpp"

#include <algorithm>
#include <cmath>

#include "prefixgroup/ops.hpp"
#include "prefixgroup/rng.hpp"

namespace pg {

std::string to_string(ForwardMode mode) { return mode == ForwardMode::shared ? "shared" : "repeated"; }

namespace {

GroupLayout layout_of(std::span<const std::int64_t> prefix, const std::vector<TokenList>& responses) {
  std::vector<std::size_t> lens;
  lens.reserve(responses.size());
  for (const auto& r : responses) lens.push_back(r.size());
  return GroupLayout(prefix.size(), std::move(lens));
}

}  // namespace

TokenList position_ids(const GroupLayout& layout, ForwardMode mode) {
  TokenList ids;
  if (mode == ForwardMode::repeated) {
    const std::size_t len = layout.padded_len();
    ids.reserve(layout.group_size() * len);
    for (std::size_t g = 0; g < layout.group_size(); ++g)
      for (std::size_t t = 0; t < len; ++t) ids.push_back(static_cast<std::int64_t>(t));
    return ids;
  }
  ids.reserve(layout.total());
  for (std::size_t t = 0; t < layout.prefix_len(); ++t) ids.push_back(static_cast<std::int64_t>(t));
  for (std::size_t g = 0; g < layout.group_size(); ++g)
    for (std::size_t t = 0; t < layout.suffix_len(g); ++t)
      ids.push_back(static_cast<std::int64_t>(layout.prefix_len() + t));
  return ids;
}

ModelInput build_repeated_input(std::span<const std::int64_t> prefix, const std::vector<TokenList>& responses,
                                std::int64_t pad_id) {
  ModelInput in;
  in.mode = ForwardMode::repeated;
  in.layout = layout_of(prefix, responses);
  in.batch = responses.size();
  in.seq = in.layout.padded_len();
  in.tokens.assign(in.batch * in.seq, pad_id);
  in.is_pad.assign(in.batch * in.seq, 1);
  for (std::size_t g = 0; g < in.batch; ++g) {
    auto row = in.tokens.begin() + static_cast<std::ptrdiff_t>(g * in.seq);
    std::copy(prefix.begin(), prefix.end(), row);
    std::copy(responses[g].begin(), responses[g].end(), row + static_cast<std::ptrdiff_t>(prefix.size()));
    std::fill_n(in.is_pad.begin() + static_cast<std::ptrdiff_t>(g * in.seq), prefix.size() + responses[g].size(), 0);
  }
  in.position_ids = position_ids(in.layout, ForwardMode::repeated);
  return in;
}

ModelInput build_shared_input(std::span<const std::int64_t> prefix, const std::vector<TokenList>& responses) {
  ModelInput in;
  in.mode = ForwardMode::shared;
  in.layout = layout_of(prefix, responses);
  in.batch = 1;
  in.seq = in.layout.total();
  in.tokens.assign(prefix.begin(), prefix.end());
  for (const auto& r : responses) in.tokens.insert(in.tokens.end(), r.begin(), r.end());
  in.is_pad.assign(in.seq, 0);
  in.position_ids = position_ids(in.layout, ForwardMode::shared);
  return in;
}

// ---------------------------------------------------------------------------

template <typename T>
Parameters<T> Parameters<T>::init(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  Parameters p;
  const std::size_t d = config.hidden();
  const std::size_t f = config.ffn_dim;
  auto uniform = [&](std::string name, Shape shape, double bound) {
    Parameter<T> t{std::move(name), shape, std::vector<T>(numel(shape))};
    for (auto& v : t.values) v = static_cast<T>(rng.uniform(-bound, bound));
    p.tensors_.push_back(std::move(t));
  };
  auto ones = [&](std::string name, std::size_t n) {
    p.tensors_.push_back(Parameter<T>{std::move(name), {n}, std::vector<T>(n, T(1))});
  };
  auto weight = [&](std::string name, std::size_t in, std::size_t out) {
    uniform(std::move(name), {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
  };

  uniform("embedding", {config.vocab_size, d}, 1.0);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    ones(pre + "attn_norm", d);
    weight(pre + "wq", d, d);
    weight(pre + "wk", d, d);
    weight(pre + "wv", d, d);
    weight(pre + "wo", d, d);
    ones(pre + "ffn_norm", d);
    weight(pre + "w_gate", d, f);
    weight(pre + "w_up", d, f);
    weight(pre + "w_down", f, d);
  }
  ones("final_norm", d);
  weight("lm_head", d, config.vocab_size);
  return p;
}

template <typename T>
std::size_t Parameters<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.values.size();
  return n;
}

template <typename T>
std::vector<T> Parameters<T>::flatten() const {
  std::vector<T> flat;
  flat.reserve(scalar_count());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.values.begin(), t.values.end());
  return flat;
}

template <typename T>
void Parameters<T>::assign(std::span<const T> flat) {
  if (flat.size() != scalar_count()) {
    throw DimensionError("parameter vector has " + std::to_string(flat.size()) + " values, model has " +
                         std::to_string(scalar_count()));
  }
  std::size_t at = 0;
  for (auto& t : tensors_) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), t.values.size(), t.values.begin());
    at += t.values.size();
  }
}

template <typename T>
std::vector<Tensor<T>> bind(Tape<T>& tape, const Parameters<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params.tensors()) out.push_back(tape.leaf(p.shape, p.values, true));
  return out;
}

template <typename T>
std::vector<Tensor<T>> constants(const Parameters<T>& params) {
  std::vector<Tensor<T>> out;
  out.reserve(params.size());
  for (const auto& p : params.tensors()) out.push_back(Tensor<T>::from(p.shape, p.values));
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
ForwardResult<T> forward(const ModelConfig& config, std::span<const Tensor<T>> params, const ModelInput& input,
                         const AttentionMasks<T>* masks) {
  const std::size_t expected = 3 + config.num_layers * static_cast<std::size_t>(LayerParam::count);
  if (params.size() != expected) {
    throw ContractError("forward got " + std::to_string(params.size()) + " parameter tensors, config needs " +
                        std::to_string(expected));
  }
  const std::size_t batch = input.batch, seq = input.seq;
  if (input.tokens.size() != batch * seq) {
    throw DimensionError("model input has " + std::to_string(input.tokens.size()) + " tokens for batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  if (input.position_ids.size() != batch * seq) {
    throw DimensionError("model input has " + std::to_string(input.position_ids.size()) +
                         " position ids for batch " + std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  for (auto t : input.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
      throw InputError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
  if (input.mode == ForwardMode::shared && (batch != 1 || seq != input.layout.total())) {
    throw DimensionError("shared-mode input must be one row spanning layout " + input.layout.to_string());
  }
  if (input.mode == ForwardMode::repeated &&
      (batch != input.layout.group_size() || seq != input.layout.padded_len())) {
    throw DimensionError("repeated-mode input must be G padded rows for layout " + input.layout.to_string());
  }

  const std::size_t heads = config.num_heads, hd = config.head_dim, width = config.hidden();
  const T eps = static_cast<T>(config.rms_eps);

  // A single response needs no block structure: one causal call over the
  // shared row is the same computation without the split/concat copies.
  const bool single_call = input.mode == ForwardMode::shared && input.layout.group_size() == 1 && masks == nullptr;
  AttentionMasks<T> shared_masks;
  Tensor<T> row_masks;
  if (single_call) {
    row_masks = causal_mask<T>(seq);
  } else if (input.mode == ForwardMode::shared) {
    shared_masks = masks != nullptr ? *masks : build_masks<T>(input.layout);
  } else {
    row_masks = repeated_masks<T>(input.layout);
  }

  static constexpr std::size_t to_heads[] = {0, 2, 1, 3};
  auto split_heads = [&](const Tensor<T>& x) { return permute(reshape(x, {batch, seq, heads, hd}), to_heads); };
  auto merge_heads = [&](const Tensor<T>& x) { return reshape(permute(x, to_heads), {batch, seq, width}); };
  auto param = [&](std::size_t l, LayerParam p) -> const Tensor<T>& {
    return params[Parameters<T>::layer(l, p)];
  };

  Tensor<T> x = embedding_lookup(params[Parameters<T>::embedding()], input.tokens, {batch, seq});
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    Tensor<T> h = rmsnorm(x, param(l, LayerParam::attn_norm), eps);
    Tensor<T> q = apply_rope(split_heads(matmul(h, param(l, LayerParam::wq))), input.position_ids, config.rope_theta);
    Tensor<T> k = apply_rope(split_heads(matmul(h, param(l, LayerParam::wk))), input.position_ids, config.rope_theta);
    Tensor<T> v = split_heads(matmul(h, param(l, LayerParam::wv)));
    Tensor<T> attn = input.mode == ForwardMode::shared && !single_call
                         ? grouped_attention(q, k, v, input.layout, shared_masks)
                         : causal_attention(q, k, v, row_masks);
    x = add(x, matmul(merge_heads(attn), param(l, LayerParam::wo)));

    Tensor<T> h2 = rmsnorm(x, param(l, LayerParam::ffn_norm), eps);
    Tensor<T> act = mul(silu(matmul(h2, param(l, LayerParam::w_gate))), matmul(h2, param(l, LayerParam::w_up)));
    x = add(x, matmul(act, param(l, LayerParam::w_down)));
  }
  const std::size_t n = params.size();
  Tensor<T> final_hidden = rmsnorm(x, params[n - 2], eps);
  Tensor<T> logits = matmul(final_hidden, params[n - 1]);
  return {std::move(logits), std::move(final_hidden)};
}

std::uint64_t pointwise_flops_per_token(const ModelConfig& config) {
  const std::uint64_t d = config.hidden();
  const std::uint64_t f = config.ffn_dim;
  const std::uint64_t per_layer = 4 * d * d + 3 * d * f;
  return 2 * (config.num_layers * per_layer + d * config.vocab_size);
}

#define PG_INSTANTIATE_MODEL(T)                                                                       \
  template class Parameters<T>;                                                                       \
  template std::vector<Tensor<T>> bind(Tape<T>&, const Parameters<T>&);                               \
  template std::vector<Tensor<T>> constants(const Parameters<T>&);                                    \
  template ForwardResult<T> forward(const ModelConfig&, std::span<const Tensor<T>>, const ModelInput&, \
                                    const AttentionMasks<T>*);

PG_INSTANTIATE_MODEL(float)
PG_INSTANTIATE_MODEL(double)

#undef PG_INSTANTIATE_MODEL

}  // namespace pg
