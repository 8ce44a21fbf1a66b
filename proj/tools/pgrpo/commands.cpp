#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "prefixgroup/cost.hpp"
#include "prefixgroup/error.hpp"
#include "prefixgroup/grpo.hpp"
#include "prefixgroup/model.hpp"

namespace pgrpo {

namespace {

pg::ModelConfig load_config(const std::string& path) {
  pg::ModelConfig config = path.empty() ? pg::ModelConfig{} : pg::ModelConfig::load(path);
  config.validate();
  return config;
}

void emit(const std::string& path, const std::string& contents, std::ostream& out) {
  if (path.empty()) {
    out << contents;
  } else {
    pg::write_text_file(path, contents);
    out << "wrote " << path << '\n';
  }
}

}  // namespace

int run_equiv(const EquivOptions& opts, std::ostream& out) {
  const bool randomized = opts.suffix_lens.empty();
  const std::optional<pg::ModelConfig> fixed =
      opts.config_path.empty() ? std::nullopt : std::optional(load_config(opts.config_path));
  const std::optional<pg::GroupLayout> fixed_layout =
      randomized ? std::nullopt : std::optional(pg::GroupLayout(opts.prefix_len, opts.suffix_lens));

  std::ofstream report(opts.report_path);
  if (!report) throw pg::IoError("cannot open " + opts.report_path + " for writing");

  std::size_t failures = 0;
  for (std::size_t i = 0; i < opts.trials; ++i) {
    const std::uint64_t seed = opts.seed + i;
    pg::RandomTrial trial = pg::random_trial(seed);
    if (fixed) trial.config = *fixed;
    if (fixed_layout) {
      trial.layout = *fixed_layout;
      trial.rewards = pg::make_trial_data(trial.config, trial.layout, seed).rewards;
    }
    const auto fwd = pg::compare_forward(trial.config, trial.layout, seed, opts.tol, opts.mutation);
    const auto grad =
        pg::compare_gradients(trial.config, trial.layout, trial.rewards, seed, opts.tol, opts.mutation);
    for (const auto* r : {&fwd, &grad}) {
      report << r->to_json() << '\n';
      out << r->summary() << '\n';
      if (!r->pass) ++failures;
    }
  }
  if (!report) throw pg::IoError("failed writing " + opts.report_path);
  out << (failures == 0 ? "all " : "") << 2 * opts.trials - failures << "/" << 2 * opts.trials
      << " checks passed; report: " << opts.report_path << '\n';
  return failures == 0 ? kOk : kCheckFailed;
}

int run_gradcheck(const GradcheckOptions& opts, std::ostream& out) {
  pg::ModelConfig config = opts.config_path.empty() ? pg::ModelConfig{} : load_config(opts.config_path);
  if (opts.config_path.empty()) {
    config.num_heads = 1;
    config.head_dim = 4;
    config.ffn_dim = 8;
    config.vocab_size = 11;
  }
  const pg::GroupLayout layout(opts.prefix_len, opts.suffix_lens);
  const auto rewards = pg::make_trial_data(config, layout, opts.seed).rewards;
  const auto report = pg::gradcheck_model(config, layout, rewards, opts.h, opts.seed, opts.tol);
  for (const auto& t : report.tensors) {
    out << "  " << std::left << std::setw(20) << t.name << " max_rel=" << std::scientific << std::setprecision(3)
        << t.max_rel_diff << std::defaultfloat << '\n';
  }
  out << report.summary() << '\n';
  return report.pass ? kOk : kCheckFailed;
}

int run_flops(const FlopsOptions& opts, std::ostream& out) {
  pg::SweepGrid grid{opts.prefix_lens, opts.ratios, opts.groups, opts.head_dim, opts.heads};
  const auto rows = pg::sweep(grid);
  emit(opts.out_path, pg::sweep_csv(rows), out);
  if (!opts.plot_path.empty()) {
    pg::write_text_file(opts.plot_path, pg::sweep_svg(rows));
    out << "wrote " << opts.plot_path << '\n';
  }
  return kOk;
}

int run_mem(const MemOptions& opts, std::ostream& out) {
  const pg::ModelConfig config = load_config(opts.config_path);
  if (opts.groups.empty()) throw pg::ConfigError("--group needs at least one value");
  std::ostringstream csv;
  csv << "G,mode,peak_bytes\n";
  for (std::size_t g : opts.groups) {
    const pg::GroupLayout layout(opts.prefix_len, std::vector<std::size_t>(g, opts.suffix_len));
    for (auto mode : {pg::ForwardMode::repeated, pg::ForwardMode::shared}) {
      const std::size_t bytes = config.precision == pg::Precision::f64
                                    ? pg::peak_memory<double>(config, layout, mode)
                                    : pg::peak_memory<float>(config, layout, mode);
      csv << g << ',' << pg::to_string(mode) << ',' << bytes << '\n';
    }
  }
  emit(opts.out_path, csv.str(), out);
  return kOk;
}

int run_demo_train(const DemoOptions& opts, std::ostream& out) {
  pg::ModelConfig config = load_config(opts.config_path);
  if (config.precision != pg::Precision::f64) throw pg::ConfigError("demo-train runs in f64 precision");
  config.seed = opts.seed;
  const pg::GroupLayout layout(opts.prefix_len, opts.suffix_lens);

  auto repeated = pg::Parameters<double>::init(config);
  pg::ModelConfig shared_config = config;
  if (opts.mismatched_seeds) shared_config.seed = opts.seed + 1;
  auto shared = pg::Parameters<double>::init(shared_config);

  auto ascend = [&](pg::Parameters<double>& params, const pg::ObjectiveEvaluation<double>& eval) {
    std::vector<double> flat = params.flatten();
    std::size_t at = 0;
    for (const auto& g : eval.gradients)
      for (double v : g) flat[at++] += opts.lr * v;
    params.assign(flat);
  };

  out << std::setprecision(12);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    const auto data = pg::make_trial_data(config, layout, opts.seed + step + 1);
    const auto advantages = pg::compute_advantages(data.rewards);
    const auto base = pg::evaluate_objective<double>(
        config, repeated, pg::build_repeated_input(data.prefix, data.responses), advantages);
    const auto ours = pg::evaluate_objective<double>(
        config, shared, pg::build_shared_input(data.prefix, data.responses), advantages);
    ascend(repeated, base);
    ascend(shared, ours);

    const auto a = repeated.flatten();
    const auto b = shared.flatten();
    double divergence = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) divergence = std::max(divergence, std::abs(a[i] - b[i]));
    out << "step " << step + 1 << " J_repeated=" << base.objective << " J_shared=" << ours.objective
        << " max_param_divergence=" << std::scientific << divergence << std::defaultfloat << '\n';
    if (!(divergence < opts.max_divergence)) {
      out << "parameters diverged beyond " << opts.max_divergence << " at step " << step + 1 << '\n';
      return kCheckFailed;
    }
  }
  out << opts.steps << " lockstep steps completed\n";
  return kOk;
}

}  // namespace pgrpo
