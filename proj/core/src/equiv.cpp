#include "prefixgroup/equiv.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prefixgroup/finite_diff.hpp"
#include "prefixgroup/ops.hpp"
#include "prefixgroup/rng.hpp"

namespace pg {

std::string to_string(Mutation m) {
  switch (m) {
    case Mutation::none: return "none";
    case Mutation::cross_response_mask: return "cross_response_mask";
    case Mutation::sequential_positions: return "sequential_positions";
    case Mutation::drop_group_factor: return "drop_group_factor";
  }
  return "none";
}

Mutation parse_mutation(const std::string& text) {
  for (Mutation m : {Mutation::none, Mutation::cross_response_mask, Mutation::sequential_positions,
                     Mutation::drop_group_factor}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown mutation \"" + text + "\"");
}

std::string EquivalenceReport::to_json() const {
  nlohmann::json tensors_json = nlohmann::json::array();
  for (const auto& t : tensors) {
    tensors_json.push_back({{"name", t.name}, {"max_abs_diff", t.max_abs_diff}, {"max_rel_diff", t.max_rel_diff}});
  }
  nlohmann::json j = {
      {"check", check},
      {"seed", seed},
      {"config", nlohmann::json::parse(config.to_json())},
      {"layout", {{"prefix_len", layout.prefix_len()}, {"suffix_lens", layout.suffix_lens()}}},
      {"mutation", to_string(mutation)},
      {"tolerance", tolerance},
      {"max_abs_diff", max_abs_diff},
      {"max_rel_diff", max_rel_diff},
      {"pass", pass},
      {"tensors", tensors_json},
  };
  return j.dump();
}

std::string EquivalenceReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << ' ' << check << " seed=" << seed << " layout=" << layout.to_string()
     << " layers=" << config.num_layers << " heads=" << config.num_heads << " head_dim=" << config.head_dim;
  if (mutation != Mutation::none) os << " mutation=" << to_string(mutation);
  os.precision(3);
  os << std::scientific << " max_abs=" << max_abs_diff << " max_rel=" << max_rel_diff << " tol=" << tolerance;
  return os.str();
}

TrialData make_trial_data(const ModelConfig& config, const GroupLayout& layout, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  auto token = [&] { return static_cast<std::int64_t>(rng.below(config.vocab_size)); };
  TrialData data;
  for (std::size_t t = 0; t < layout.prefix_len(); ++t) data.prefix.push_back(token());
  for (std::size_t g = 0; g < layout.group_size(); ++g) {
    TokenList r;
    for (std::size_t t = 0; t < layout.suffix_len(g); ++t) r.push_back(token());
    data.responses.push_back(std::move(r));
    data.rewards.push_back(rng.unit());
  }
  return data;
}

RandomTrial random_trial(std::uint64_t seed) {
  Rng rng(seed);
  static constexpr std::size_t heads[] = {1, 2, 4};
  static constexpr std::size_t dims[] = {4, 8};
  static constexpr std::size_t ffn[] = {8, 16, 32};
  RandomTrial trial;
  trial.seed = seed;
  trial.config.num_layers = static_cast<std::size_t>(rng.between(1, 3));
  trial.config.num_heads = heads[rng.below(3)];
  trial.config.head_dim = dims[rng.below(2)];
  trial.config.ffn_dim = ffn[rng.below(3)];
  trial.config.vocab_size = static_cast<std::size_t>(rng.between(8, 48));
  trial.config.precision = Precision::f64;
  trial.config.seed = rng.next();
  const auto prefix = static_cast<std::size_t>(rng.between(1, 64));
  const auto groups = static_cast<std::size_t>(rng.between(1, 8));
  std::vector<std::size_t> lens;
  for (std::size_t g = 0; g < groups; ++g) lens.push_back(static_cast<std::size_t>(rng.between(1, 16)));
  trial.layout = GroupLayout(prefix, std::move(lens));
  for (std::size_t g = 0; g < groups; ++g) trial.rewards.push_back(rng.unit());
  return trial;
}

namespace {

void require_f64(const ModelConfig& config) {
  config.validate();
  if (config.precision != Precision::f64) throw ConfigError("equivalence checks run in f64 precision");
}

// Causal mask over the whole concatenated sequence: responses see each other.
AttentionMasks<double> leaky_masks(const GroupLayout& layout) {
  AttentionMasks<double> masks = build_masks<double>(layout);
  const std::size_t cols = layout.total();
  auto m = masks.suffix_mask.mutable_data();
  for (std::size_t r = 0; r < layout.total_suffix(); ++r)
    for (std::size_t j = 0; j <= layout.prefix_len() + r; ++j) m[r * cols + j] = 0.0;
  return masks;
}

struct ModeInputs {
  ModelInput repeated;
  ModelInput shared;
  std::optional<AttentionMasks<double>> masks;
};

ModeInputs prepare(const TrialData& data, const GroupLayout& layout, Mutation mutation) {
  ModeInputs in{build_repeated_input(data.prefix, data.responses), build_shared_input(data.prefix, data.responses),
                std::nullopt};
  if (mutation == Mutation::cross_response_mask) in.masks = leaky_masks(layout);
  if (mutation == Mutation::sequential_positions) {
    for (std::size_t t = 0; t < in.shared.position_ids.size(); ++t) {
      in.shared.position_ids[t] = static_cast<std::int64_t>(t);
    }
  }
  return in;
}

struct DiffAccumulator {
  double max_abs = 0.0;
  double max_rel = 0.0;
  void add(double a, double b) {
    const double diff = std::abs(a - b);
    max_abs = std::max(max_abs, diff);
    const double denom = std::max(std::abs(a), std::abs(b));
    if (denom > 0.0) max_rel = std::max(max_rel, diff / denom);
  }
};

}  // namespace

EquivalenceReport compare_forward(const ModelConfig& config, const GroupLayout& layout, std::uint64_t seed,
                                  double tolerance, Mutation mutation) {
  require_f64(config);
  const auto params = Parameters<double>::init(config);
  const TrialData data = make_trial_data(config, layout, seed);
  ModeInputs in = prepare(data, layout, mutation);

  const auto weights = constants(params);
  const auto base = forward<double>(config, weights, in.repeated).logits;
  const auto ours = forward<double>(config, weights, in.shared, in.masks ? &*in.masks : nullptr).logits;

  const std::size_t vocab = config.vocab_size;
  const std::size_t row_len = in.repeated.seq;
  auto b = base.data();
  auto s = ours.data();
  DiffAccumulator acc;
  auto compare = [&](std::size_t shared_pos, std::size_t row, std::size_t pos) {
    for (std::size_t c = 0; c < vocab; ++c) acc.add(s[shared_pos * vocab + c], b[(row * row_len + pos) * vocab + c]);
  };
  for (std::size_t g = 0; g < layout.group_size(); ++g) {
    for (std::size_t t = 0; t < layout.prefix_len(); ++t) compare(t, g, t);
    for (std::size_t j = 0; j < layout.suffix_len(g); ++j) compare(layout.suffix_begin(g) + j, g, layout.prefix_len() + j);
  }

  EquivalenceReport r;
  r.check = "forward";
  r.seed = seed;
  r.config = config;
  r.layout = layout;
  r.mutation = mutation;
  r.tolerance = tolerance;
  r.max_abs_diff = acc.max_abs;
  r.max_rel_diff = acc.max_rel;
  r.pass = acc.max_abs < tolerance;
  r.tensors.push_back({"logits", acc.max_abs, acc.max_rel});
  return r;
}

EquivalenceReport compare_gradients(const ModelConfig& config, const GroupLayout& layout,
                                    std::span<const double> rewards, std::uint64_t seed, double tolerance,
                                    Mutation mutation, const LossOptions& loss) {
  require_f64(config);
  if (rewards.size() != layout.group_size()) {
    throw ConfigError("compare_gradients: " + std::to_string(rewards.size()) + " rewards for group of " +
                      std::to_string(layout.group_size()));
  }
  const auto params = Parameters<double>::init(config);
  const TrialData data = make_trial_data(config, layout, seed);
  ModeInputs in = prepare(data, layout, mutation);
  const auto advantages = compute_advantages(rewards);

  LossOptions shared_loss = loss;
  if (mutation == Mutation::drop_group_factor) shared_loss.drop_group_factor = true;
  const auto base = evaluate_objective<double>(config, params, in.repeated, advantages, loss);
  const auto ours = evaluate_objective<double>(config, params, in.shared, advantages, shared_loss,
                                               in.masks ? &*in.masks : nullptr);

  EquivalenceReport r;
  r.check = "gradients";
  r.seed = seed;
  r.config = config;
  r.layout = layout;
  r.mutation = mutation;
  r.tolerance = tolerance;
  DiffAccumulator objective;
  objective.add(ours.objective, base.objective);
  r.tensors.push_back({"objective", objective.max_abs, objective.max_rel});
  for (std::size_t p = 0; p < params.size(); ++p) {
    DiffAccumulator acc;
    for (std::size_t e = 0; e < base.gradients[p].size(); ++e) acc.add(ours.gradients[p][e], base.gradients[p][e]);
    r.tensors.push_back({params[p].name, acc.max_abs, acc.max_rel});
  }
  for (const auto& t : r.tensors) {
    r.max_abs_diff = std::max(r.max_abs_diff, t.max_abs_diff);
    r.max_rel_diff = std::max(r.max_rel_diff, t.max_rel_diff);
  }
  r.pass = r.max_abs_diff < tolerance;
  return r;
}

EquivalenceReport gradcheck_model(const ModelConfig& config, const GroupLayout& layout,
                                  std::span<const double> rewards, double h, std::uint64_t seed, double tolerance) {
  require_f64(config);
  if (rewards.size() != layout.group_size()) {
    throw ConfigError("gradcheck_model: " + std::to_string(rewards.size()) + " rewards for group of " +
                      std::to_string(layout.group_size()));
  }
  auto params = Parameters<double>::init(config);
  const TrialData data = make_trial_data(config, layout, seed);
  const ModelInput input = build_shared_input(data.prefix, data.responses);
  const auto advantages = compute_advantages(rewards);

  const auto tape_eval = evaluate_objective<double>(config, params, input, advantages);
  if (!std::isfinite(tape_eval.objective)) throw NumericError("objective is not finite");

  Parameters<double> probe = params;
  auto objective = [&](std::span<const double> flat) {
    probe.assign(flat);
    const auto weights = constants(probe);
    const auto logits = forward<double>(config, weights, input).logits;
    return grpo_loss(logits, input, advantages).item();
  };
  const auto flat = params.flatten();
  const auto numeric = finite_difference_grad(objective, flat, h);

  EquivalenceReport r;
  r.check = "gradcheck";
  r.seed = seed;
  r.config = config;
  r.layout = layout;
  r.tolerance = tolerance;
  std::size_t at = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    TensorDiff d{params[p].name, 0.0, 0.0};
    for (double analytic : tape_eval.gradients[p]) {
      d.max_abs_diff = std::max(d.max_abs_diff, std::abs(analytic - numeric[at]));
      d.max_rel_diff = std::max(d.max_rel_diff, relative_error(analytic, numeric[at]));
      ++at;
    }
    r.max_abs_diff = std::max(r.max_abs_diff, d.max_abs_diff);
    r.max_rel_diff = std::max(r.max_rel_diff, d.max_rel_diff);
    r.tensors.push_back(std::move(d));
  }
  r.pass = r.max_rel_diff < tolerance;
  return r;
}

}  // namespace pg
