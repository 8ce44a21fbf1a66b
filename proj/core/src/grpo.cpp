#include "prefixgroup/grpo.hpp"

#include <cmath>
#include <numeric>

#include "prefixgroup/ops.hpp"

namespace pg {

std::vector<double> compute_advantages(std::span<const double> rewards, double eps) {
  if (rewards.empty()) throw InputError("compute_advantages needs at least one reward");
  for (double r : rewards) {
    if (!std::isfinite(r)) throw NumericError("reward is not finite");
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double stddev = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (stddev == 0.0) return adv;
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (stddev + eps);
  return adv;
}

template <typename T>
Tensor<T> grpo_loss(const Tensor<T>& logits, const ModelInput& input, std::span<const double> advantages,
                    const LossOptions& options) {
  const GroupLayout& layout = input.layout;
  const std::size_t groups = layout.group_size();
  if (advantages.size() != groups) {
    throw DimensionError("grpo_loss: " + std::to_string(advantages.size()) + " advantages for group of " +
                         std::to_string(groups));
  }
  if (logits.dim() != 3 || logits.size(0) != input.batch || logits.size(1) != input.seq) {
    throw DimensionError("grpo_loss: logits " + shape_string(logits.shape()) + " do not match input batch " +
                         std::to_string(input.batch) + " x seq " + std::to_string(input.seq));
  }
  const std::size_t vocab = logits.size(2);
  const std::size_t lp = layout.prefix_len();

  // (row of the flattened logits that predicts the token, target, weight).
  std::vector<std::size_t> rows;
  TokenList targets;
  std::vector<T> weights;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t len = layout.suffix_len(g);
    double w = advantages[g];
    if (!options.drop_group_factor) w /= static_cast<double>(groups);
    if (options.aggregation == TokenAggregation::mean) w /= static_cast<double>(len);
    for (std::size_t j = options.score_first_token ? 0 : 1; j < len; ++j) {
      std::size_t target_pos, predictor;
      if (input.mode == ForwardMode::repeated) {
        target_pos = g * input.seq + lp + j;
        predictor = target_pos - 1;
      } else {
        target_pos = layout.suffix_begin(g) + j;
        predictor = j == 0 ? lp - 1 : target_pos - 1;
      }
      const std::int64_t target = input.tokens.at(target_pos);
      if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
        throw InputError("grpo_loss: target token " + std::to_string(target) + " outside vocabulary of " +
                         std::to_string(vocab));
      }
      rows.push_back(predictor);
      targets.push_back(target);
      weights.push_back(static_cast<T>(w));
    }
  }
  if (rows.empty()) {
    // Nothing to score (every response is a single token and the first token is skipped).
    return scale(sum(index_select(reshape(logits, {input.batch * input.seq, vocab}), 0,
                                  std::vector<std::size_t>{0})),
                 T(0));
  }
  Tensor<T> flat = reshape(logits, {input.batch * input.seq, vocab});
  Tensor<T> picked = gather_lastdim(log_softmax_lastdim(index_select(flat, 0, rows)), targets);
  return sum(mul(picked, Tensor<T>::from({weights.size()}, weights)));
}

template <typename T>
ObjectiveEvaluation<T> evaluate_objective(const ModelConfig& config, const Parameters<T>& params,
                                          const ModelInput& input, std::span<const double> advantages,
                                          const LossOptions& options, const AttentionMasks<T>* masks) {
  Tape<T> tape;
  auto leaves = bind(tape, params);
  auto out = forward<T>(config, leaves, input, masks);
  tape.retain_grad(out.final_hidden);
  Tensor<T> j = grpo_loss(out.logits, input, advantages, options);
  tape.backward(j);

  ObjectiveEvaluation<T> eval;
  eval.objective = static_cast<double>(j.item());
  eval.logits.assign(out.logits.data().begin(), out.logits.data().end());
  for (const auto& leaf : leaves) {
    if (leaf.has_grad()) {
      eval.gradients.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      eval.gradients.emplace_back(leaf.numel(), T(0));
    }
  }
  if (out.final_hidden.has_grad()) {
    eval.final_hidden_grad.assign(out.final_hidden.grad().begin(), out.final_hidden.grad().end());
  } else {
    eval.final_hidden_grad.assign(out.final_hidden.numel(), T(0));
  }
  return eval;
}

template <typename T>
std::vector<std::vector<T>> multi_query_last_token_scores(const ModelConfig& config, const Parameters<T>& params,
                                                          std::span<const std::int64_t> response_tokens,
                                                          const std::vector<TokenList>& questions) {
  ModelInput input = build_shared_input(response_tokens, questions);
  auto weights = constants(params);
  auto out = forward<T>(config, weights, input);
  const std::size_t vocab = config.vocab_size;
  auto data = out.logits.data();
  std::vector<std::vector<T>> scores;
  scores.reserve(questions.size());
  for (std::size_t q = 0; q < questions.size(); ++q) {
    const std::size_t last = input.layout.suffix_end(q) - 1;
    scores.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(last * vocab),
                        data.begin() + static_cast<std::ptrdiff_t>((last + 1) * vocab));
  }
  return scores;
}

#define PG_INSTANTIATE_GRPO(T)                                                                            \
  template Tensor<T> grpo_loss(const Tensor<T>&, const ModelInput&, std::span<const double>,              \
                               const LossOptions&);                                                       \
  template ObjectiveEvaluation<T> evaluate_objective(const ModelConfig&, const Parameters<T>&,            \
                                                     const ModelInput&, std::span<const double>,          \
                                                     const LossOptions&, const AttentionMasks<T>*);       \
  template std::vector<std::vector<T>> multi_query_last_token_scores(                                     \
      const ModelConfig&, const Parameters<T>&, std::span<const std::int64_t>, const std::vector<TokenList>&);

PG_INSTANTIATE_GRPO(float)
PG_INSTANTIATE_GRPO(double)

#undef PG_INSTANTIATE_GRPO

}  // namespace pg
