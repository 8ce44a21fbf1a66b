#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefixgroup/attention.hpp"
#include "prefixgroup/config.hpp"
#include "prefixgroup/layout.hpp"
#include "prefixgroup/tensor.hpp"

namespace pg {

enum class ForwardMode { repeated, shared };

std::string to_string(ForwardMode mode);

using TokenList = std::vector<std::int64_t>;

// Tokens laid out for one forward mode.
//   repeated: batch = G rows of [prefix | response i | pad], seq = L_p + max L_i.
//   shared:   batch = 1 row of [prefix | response 1 | ... | response G].
// position_ids holds batch * seq entries, row-major.
struct ModelInput {
  ForwardMode mode = ForwardMode::shared;
  GroupLayout layout{1, {1}};
  std::size_t batch = 0;
  std::size_t seq = 0;
  TokenList tokens;
  TokenList position_ids;
  std::vector<std::uint8_t> is_pad;
};

ModelInput build_repeated_input(std::span<const std::int64_t> prefix, const std::vector<TokenList>& responses,
                                std::int64_t pad_id = 0);
ModelInput build_shared_input(std::span<const std::int64_t> prefix, const std::vector<TokenList>& responses);

// repeated: each row counts 0 .. L_p + max L_i - 1 (pads continue the count).
// shared: prefix 0 .. L_p - 1, then every response restarts at L_p.
TokenList position_ids(const GroupLayout& layout, ForwardMode mode);

template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> values;
};

enum class LayerParam : std::size_t { attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down, count };

// Every trainable tensor of the decoder, in a fixed order:
// embedding, per-layer blocks, final norm, output head.
template <typename T>
class Parameters {
 public:
  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), embeddings ~ U(-1, 1),
  // norm weights 1, all drawn from Rng(config.seed).
  static Parameters init(const ModelConfig& config);

  std::vector<Parameter<T>>& tensors() { return tensors_; }
  const std::vector<Parameter<T>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  const Parameter<T>& operator[](std::size_t i) const { return tensors_.at(i); }

  static constexpr std::size_t embedding() { return 0; }
  static constexpr std::size_t layer(std::size_t l, LayerParam p) {
    return 1 + l * static_cast<std::size_t>(LayerParam::count) + static_cast<std::size_t>(p);
  }
  std::size_t final_norm() const { return tensors_.size() - 2; }
  std::size_t lm_head() const { return tensors_.size() - 1; }

  std::size_t scalar_count() const;
  std::vector<T> flatten() const;
  void assign(std::span<const T> flat);

 private:
  std::vector<Parameter<T>> tensors_;
};

// Registers every parameter as a gradient-requiring leaf of `tape`.
template <typename T>
std::vector<Tensor<T>> bind(Tape<T>& tape, const Parameters<T>& params);

// Untracked copies, for inference-only forwards.
template <typename T>
std::vector<Tensor<T>> constants(const Parameters<T>& params);

template <typename T>
struct ForwardResult {
  Tensor<T> logits;        // [batch, seq, vocab]
  Tensor<T> final_hidden;  // [batch, seq, hidden], input of the output head
};

// Pre-norm decoder: per layer RMSNorm -> QKV -> RoPE -> attention -> output
// projection -> residual -> RMSNorm -> SwiGLU FFN -> residual; then final
// RMSNorm and output head. Repeated mode runs causal attention per row with pad
// keys masked; shared mode runs grouped attention. `masks` overrides the
// shared-mode masks (otherwise build_masks(layout)).
template <typename T>
ForwardResult<T> forward(const ModelConfig& config, std::span<const Tensor<T>> params, const ModelInput& input,
                         const AttentionMasks<T>* masks = nullptr);

// Multiply-accumulate FLOPs (x2) of every per-token dense map: QKV, output
// projection, FFN and output head.
std::uint64_t pointwise_flops_per_token(const ModelConfig& config);

}  // namespace pg
