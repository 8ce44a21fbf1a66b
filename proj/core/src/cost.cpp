#include "prefixgroup/cost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "prefixgroup/equiv.hpp"
#include "prefixgroup/error.hpp"
#include "prefixgroup/grpo.hpp"
#include "prefixgroup/memory.hpp"
#include "prefixgroup/rng.hpp"

namespace pg {

namespace {

FlopCount checked_mul(FlopCount a, FlopCount b) {
  if (a != 0 && b > std::numeric_limits<FlopCount>::max() / a) throw ConfigError("FLOP count exceeds 128 bits");
  return a * b;
}

FlopCount checked_add(FlopCount a, FlopCount b) {
  if (b > std::numeric_limits<FlopCount>::max() - a) throw ConfigError("FLOP count exceeds 128 bits");
  return a + b;
}

FlopCount product(std::initializer_list<FlopCount> factors) {
  FlopCount out = 1;
  for (FlopCount f : factors) out = checked_mul(out, f);
  return out;
}

void require_positive(std::initializer_list<std::uint64_t> args, const char* what) {
  for (auto a : args) {
    if (a == 0) throw ConfigError(std::string(what) + ": every argument must be at least 1");
  }
}

double ratio_of(FlopCount num, FlopCount den) { return to_double(num) / to_double(den); }

}  // namespace

std::string to_string(FlopCount value) {
  if (value == 0) return "0";
  std::string digits;
  while (value != 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(value % 10)));
    value /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  return digits;
}

double to_double(FlopCount value) {
  const auto hi = static_cast<std::uint64_t>(value >> 64);
  const auto lo = static_cast<std::uint64_t>(value);
  return std::ldexp(static_cast<double>(hi), 64) + static_cast<double>(lo);
}

FlopCount attn_flops_base(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t head_dim, std::uint64_t heads) {
  require_positive({prefix_len, suffix_len, group, head_dim, heads}, "attn_flops_base");
  const FlopCount len = checked_add(prefix_len, suffix_len);
  return product({group, len, len, head_dim, heads});
}

FlopCount attn_flops_ours(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t head_dim, std::uint64_t heads) {
  require_positive({prefix_len, suffix_len, group, head_dim, heads}, "attn_flops_ours");
  const FlopCount lp = prefix_len, lr = suffix_len;
  const FlopCount prefix = product({lp, lp, head_dim, heads});
  const FlopCount keys = checked_add(checked_mul(2, lp), lr);
  const FlopCount suffix = product({group, lr, keys, head_dim, heads});
  return checked_add(prefix, suffix);
}

FlopCount pointwise_flops(std::uint64_t prefix_len, std::uint64_t suffix_len, std::uint64_t group,
                          std::uint64_t ffn_per_token, ForwardMode mode) {
  require_positive({prefix_len, suffix_len, group, ffn_per_token}, "pointwise_flops");
  const FlopCount tokens = mode == ForwardMode::repeated
                               ? checked_mul(group, checked_add(prefix_len, suffix_len))
                               : checked_add(prefix_len, checked_mul(group, suffix_len));
  return checked_mul(tokens, ffn_per_token);
}

CostReport cost_report(const CostInputs& in) {
  CostReport r;
  r.inputs = in;
  r.attn_flops_base = attn_flops_base(in.prefix_len, in.suffix_len, in.group, in.head_dim, in.heads);
  r.attn_flops_ours = attn_flops_ours(in.prefix_len, in.suffix_len, in.group, in.head_dim, in.heads);
  r.pointwise_flops_base =
      pointwise_flops(in.prefix_len, in.suffix_len, in.group, in.ffn_per_token, ForwardMode::repeated);
  r.pointwise_flops_ours =
      pointwise_flops(in.prefix_len, in.suffix_len, in.group, in.ffn_per_token, ForwardMode::shared);
  r.ratio_attn = ratio_of(r.attn_flops_ours, r.attn_flops_base);
  r.ratio_pointwise = ratio_of(r.pointwise_flops_ours, r.pointwise_flops_base);
  r.ratio_total = ratio_of(checked_add(r.attn_flops_ours, r.pointwise_flops_ours),
                           checked_add(r.attn_flops_base, r.pointwise_flops_base));
  return r;
}

CostReport cost_report(const ModelConfig& config, const GroupLayout& layout) {
  config.validate();
  const double mean = static_cast<double>(layout.total_suffix()) / static_cast<double>(layout.group_size());
  CostInputs in;
  in.prefix_len = layout.prefix_len();
  in.suffix_len = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(mean)));
  in.group = layout.group_size();
  in.head_dim = config.head_dim;
  in.heads = config.num_heads * config.num_layers;
  in.ffn_per_token = pointwise_flops_per_token(config);
  return cost_report(in);
}

// ---------------------------------------------------------------------------

namespace {

TrialData fixed_trial(const ModelConfig& config, const GroupLayout& layout) {
  return make_trial_data(config, layout, 0x5eedull);
}

ModelInput input_for(const TrialData& data, ForwardMode mode) {
  return mode == ForwardMode::shared ? build_shared_input(data.prefix, data.responses)
                                     : build_repeated_input(data.prefix, data.responses);
}

}  // namespace

template <typename T>
FlopTally measured_flops(const ModelConfig& config, const GroupLayout& layout, ForwardMode mode) {
  config.validate();
  const auto params = Parameters<T>::init(config);
  const auto weights = constants(params);
  const ModelInput input = input_for(fixed_trial(config, layout), mode);
  FlopCounter counter;
  {
    FlopScope scope(counter);
    forward<T>(config, weights, input);
  }
  return counter.tally();
}

template <typename T>
std::size_t peak_memory(const ModelConfig& config, const GroupLayout& layout, ForwardMode mode) {
  config.validate();
  const auto params = Parameters<T>::init(config);
  const TrialData data = fixed_trial(config, layout);
  const ModelInput input = input_for(data, mode);
  const auto advantages = compute_advantages(data.rewards);
  MemoryTracker tracker;
  {
    MemoryScope scope(tracker);
    Tape<T> tape;
    const auto weights = bind(tape, params);
    const auto logits = forward<T>(config, weights, input).logits;
    const auto loss = grpo_loss(logits, input, advantages);
    tape.backward(loss);
  }
  return tracker.peak_bytes();
}

template FlopTally measured_flops<float>(const ModelConfig&, const GroupLayout&, ForwardMode);
template FlopTally measured_flops<double>(const ModelConfig&, const GroupLayout&, ForwardMode);
template std::size_t peak_memory<float>(const ModelConfig&, const GroupLayout&, ForwardMode);
template std::size_t peak_memory<double>(const ModelConfig&, const GroupLayout&, ForwardMode);

// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep(const SweepGrid& grid) {
  if (grid.prefix_lens.empty() || grid.ratios.empty() || grid.groups.empty()) {
    throw ConfigError("sweep grid must have at least one prefix length, ratio and group size");
  }
  std::vector<SweepRow> rows;
  rows.reserve(grid.prefix_lens.size() * grid.ratios.size() * grid.groups.size());
  for (auto lp : grid.prefix_lens) {
    for (double ratio : grid.ratios) {
      if (!(ratio > 0.0) || !std::isfinite(ratio)) throw ConfigError("sweep ratios must be positive");
      const double lr_exact = static_cast<double>(lp) / ratio;
      const auto lr = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(lr_exact)));
      for (auto g : grid.groups) {
        SweepRow row{lp, lr, g, grid.head_dim, grid.heads, 0, 0, 0.0};
        row.flops_base = attn_flops_base(lp, lr, g, grid.head_dim, grid.heads);
        row.flops_ours = attn_flops_ours(lp, lr, g, grid.head_dim, grid.heads);
        row.ratio = ratio_of(row.flops_ours, row.flops_base);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    os << r.prefix_len << ',' << r.suffix_len << ',' << r.group << ',' << r.head_dim << ',' << r.heads << ','
       << to_string(r.flops_base) << ',' << to_string(r.flops_ours) << ',' << r.ratio << '\n';
  }
  return os.str();
}

void write_text_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << contents;
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

std::string sweep_svg(const std::vector<SweepRow>& rows) {
  constexpr double width = 640, height = 400, left = 60, right = 110, top = 20, bottom = 50;
  static constexpr const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                           "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  // Series keyed by G, points keyed by L_p / L_r; repeated x values from
  // several prefix lengths are averaged.
  std::map<std::uint64_t, std::map<double, std::pair<double, int>>> series;
  double xmin = std::numeric_limits<double>::max(), xmax = 0.0, ymax = 0.0;
  for (const auto& r : rows) {
    const double x = static_cast<double>(r.prefix_len) / static_cast<double>(r.suffix_len);
    auto& cell = series[r.group][x];
    cell.first += r.ratio;
    cell.second += 1;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymax = std::max(ymax, r.ratio);
  }
  if (rows.empty()) xmin = xmax = 1.0;
  const double lx0 = std::log10(xmin), lx1 = std::max(std::log10(xmax), lx0 + 1e-9);
  ymax = std::max(ymax, 1e-9) * 1.05;
  auto px = [&](double x) { return left + (std::log10(x) - lx0) / (lx1 - lx0) * (width - left - right); };
  auto py = [&](double y) { return top + (1.0 - y / ymax) * (height - top - bottom); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << height - bottom << "\" x2=\"" << width - right << "\" y2=\""
     << height - bottom << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << height - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (width - right + left) / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-size=\"12\">L_p / L_r (log scale)</text>\n";
  os << "<text x=\"14\" y=\"" << (height - bottom + top) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 14,"
     << (height - bottom + top) / 2 << ")\" text-anchor=\"middle\">attention FLOPs ratio</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = ymax * i / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << y
       << "</text>\n";
  }
  std::size_t idx = 0;
  for (const auto& [g, points] : series) {
    const char* color = colors[idx % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, cell] : points) os << px(x) << ',' << py(cell.first / cell.second) << ' ';
    os << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(idx + 1);
    os << "<text x=\"" << width - right + 10 << "\" y=\"" << ly << "\" font-size=\"12\" fill=\"" << color
       << "\">G=" << g << "</text>\n";
    ++idx;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace pg
