#pragma once

#include <span>
#include <vector>

#include "prefixgroup/model.hpp"

namespace pg {

inline constexpr double kAdvantageEps = 1e-6;

// A_i = (r_i - mean) / (population std + eps); all zero for a constant group.
std::vector<double> compute_advantages(std::span<const double> rewards, double eps = kAdvantageEps);

enum class TokenAggregation { sum, mean };

struct LossOptions {
  // Per-response reduction over its tokens. `sum` is the default.
  TokenAggregation aggregation = TokenAggregation::sum;
  // Score the first response token from the logit at the last prefix
  // position. When false only in-response transitions are scored and the
  // objective has no dependence on any prefix hidden state.
  bool score_first_token = true;
  // Negative control for the equivalence harness: omit the 1/G factor.
  bool drop_group_factor = false;
};

// J = (1/G) sum_i A_i sum_{t in R_i} log softmax(logit_{t-1})[token_t].
// Prefix and pad positions are never targets. Works on logits from either
// forward mode; the value is identical across modes for identical inputs.
template <typename T>
Tensor<T> grpo_loss(const Tensor<T>& logits, const ModelInput& input, std::span<const double> advantages,
                    const LossOptions& options = {});

template <typename T>
struct ObjectiveEvaluation {
  double objective = 0.0;
  std::vector<T> logits;                  // [batch * seq * vocab]
  std::vector<std::vector<T>> gradients;  // aligned with Parameters::tensors()
  std::vector<T> final_hidden_grad;       // dJ/d(final hidden), [batch * seq * hidden]
};

// Forward, objective and full backward on a fresh tape.
template <typename T>
ObjectiveEvaluation<T> evaluate_objective(const ModelConfig& config, const Parameters<T>& params,
                                          const ModelInput& input, std::span<const double> advantages,
                                          const LossOptions& options = {},
                                          const AttentionMasks<T>* masks = nullptr);

// Runs one shared-prefix forward over [response | Q_1 | ... | Q_k] and returns the
// output-head logits at the final token of every question.
template <typename T>
std::vector<std::vector<T>> multi_query_last_token_scores(const ModelConfig& config, const Parameters<T>& params,
                                                          std::span<const std::int64_t> response_tokens,
                                                          const std::vector<TokenList>& questions);

}  // namespace pg
