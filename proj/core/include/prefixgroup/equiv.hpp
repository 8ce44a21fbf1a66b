#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefixgroup/config.hpp"
#include "prefixgroup/grpo.hpp"
#include "prefixgroup/layout.hpp"
#include "prefixgroup/model.hpp"

namespace pg {

// Deliberate defects injected into the shared-prefix run to show the harness
// detects real inequivalence.
enum class Mutation {
  none,
  cross_response_mask,   // suffix rows may also attend to earlier responses
  sequential_positions,  // shared sequence numbered 0 .. total-1
  drop_group_factor,     // objective loses its 1/G factor
};

std::string to_string(Mutation m);
Mutation parse_mutation(const std::string& text);

struct TensorDiff {
  std::string name;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
};

struct EquivalenceReport {
  std::string check;  // "forward", "gradients" or "gradcheck"
  std::uint64_t seed = 0;
  ModelConfig config;
  GroupLayout layout{1, {1}};
  Mutation mutation = Mutation::none;
  double tolerance = 0.0;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  bool pass = false;
  std::vector<TensorDiff> tensors;

  // One JSON object (a single line) with at least
  // {seed, config, layout, max_abs_diff, max_rel_diff, pass}.
  std::string to_json() const;
  std::string summary() const;
};

// Random prefix/response tokens and rewards for a layout.
struct TrialData {
  TokenList prefix;
  std::vector<TokenList> responses;
  std::vector<double> rewards;
};

TrialData make_trial_data(const ModelConfig& config, const GroupLayout& layout, std::uint64_t seed);

// Randomized configuration drawn from layers {1,2,3}, heads {1,2,4},
// head_dim {4,8}, L_p in [1,64], L_i in [1,16], G in [1,8]; f64.
struct RandomTrial {
  std::uint64_t seed = 0;
  ModelConfig config;
  GroupLayout layout{1, {1}};
  std::vector<double> rewards;
};

RandomTrial random_trial(std::uint64_t seed);

// Logits of every token in both representations (prefix tokens against every
// repeated row). Passes iff max abs diff < tolerance. Requires f64.
EquivalenceReport compare_forward(const ModelConfig& config, const GroupLayout& layout, std::uint64_t seed,
                                  double tolerance, Mutation mutation = Mutation::none);

// Objective and every parameter gradient in both modes from one parameter
// instance; advantages come from compute_advantages(rewards).
EquivalenceReport compare_gradients(const ModelConfig& config, const GroupLayout& layout,
                                    std::span<const double> rewards, std::uint64_t seed, double tolerance,
                                    Mutation mutation = Mutation::none, const LossOptions& loss = {});

// Shared-mode tape gradient against central finite differences of the
// objective over every parameter scalar. max_rel_diff uses relative_error with
// its default floor.
EquivalenceReport gradcheck_model(const ModelConfig& config, const GroupLayout& layout,
                                  std::span<const double> rewards, double h, std::uint64_t seed,
                                  double tolerance = 1e-5);

}  // namespace pg
