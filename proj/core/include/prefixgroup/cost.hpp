#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prefixgroup/config.hpp"
#include "prefixgroup/flops.hpp"
#include "prefixgroup/layout.hpp"
#include "prefixgroup/model.hpp"

namespace pg {

// Closed-form counts are exact 128-bit integers. Arithmetic that would exceed
// the type throws ConfigError rather than wrapping.
__extension__ typedef unsigned __int128 FlopCount;

std::string to_string(FlopCount value);
double to_double(FlopCount value);

// G (L_p + L_r)^2 d n
FlopCount attn_flops_base(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t head_dim, std::uint64_t heads);
// L_p^2 d n + G L_r (2 L_p + L_r) d n
FlopCount attn_flops_ours(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t head_dim, std::uint64_t heads);
// repeated: G (L_p + L_r) C_ffn; shared: (L_p + G L_r) C_ffn
FlopCount pointwise_flops(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t ffn_per_token, ForwardMode mode);

struct CostInputs {
  std::uint64_t prefix_len = 1;
  std::uint64_t suffix_len = 1;
  std::uint64_t group = 1;
  std::uint64_t head_dim = 1;
  std::uint64_t heads = 1;
  std::uint64_t ffn_per_token = 1;
};

struct CostReport {
  CostInputs inputs;
  FlopCount attn_flops_base = 0;
  FlopCount attn_flops_ours = 0;
  FlopCount pointwise_flops_base = 0;
  FlopCount pointwise_flops_ours = 0;
  double ratio_attn = 0.0;
  double ratio_pointwise = 0.0;
  double ratio_total = 0.0;
};

CostReport cost_report(const CostInputs& inputs);

// Per-layer attention counts scale with the layer count; pointwise counts use
// pointwise_flops_per_token(config). Non-uniform layouts use the rounded mean
// response length.
CostReport cost_report(const ModelConfig& config, const GroupLayout& layout);

// Instrumented forward on random tokens. Attention counts 4 * head_dim FLOPs
// per visible (query, key) pair per head, so a causal call over L tokens is
// about twice the closed-form L^2 d n term.
template <typename T>
FlopTally measured_flops(const ModelConfig& config, const GroupLayout& layout, ForwardMode mode);

// Peak live tensor bytes over forward, objective and backward for one group,
// parameters included.
template <typename T>
std::size_t peak_memory(const ModelConfig& config, const GroupLayout& layout, ForwardMode mode);

struct SweepGrid {
  std::vector<std::uint64_t> prefix_lens;
  std::vector<double> ratios;  // L_p / L_r
  std::vector<std::uint64_t> groups;
  std::uint64_t head_dim = 128;
  std::uint64_t heads = 32;
};

struct SweepRow {
  std::uint64_t prefix_len = 0;
  std::uint64_t suffix_len = 0;
  std::uint64_t group = 0;
  std::uint64_t head_dim = 0;
  std::uint64_t heads = 0;
  FlopCount flops_base = 0;
  FlopCount flops_ours = 0;
  double ratio = 0.0;
};

// L_r = max(1, round(L_p / ratio)). Rows are ordered by (L_p, ratio, G) as
// given in the grid.
std::vector<SweepRow> sweep(const SweepGrid& grid);

inline constexpr const char* kSweepCsvHeader = "L_p,L_r,G,d,n,flops_base,flops_ours,ratio";

std::string sweep_csv(const std::vector<SweepRow>& rows);
void write_text_file(const std::string& path, const std::string& contents);

// Line chart of ratio against L_p / L_r (log x axis), one series per G.
std::string sweep_svg(const std::vector<SweepRow>& rows);

}  // namespace pg
