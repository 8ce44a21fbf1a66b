// pgrpo: equivalence checks, gradient checks, cost sweeps and a lockstep
// GRPO demo for the shared-prefix forward.

#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "prefixgroup/error.hpp"

namespace {

int classify(const pg::Error& e) {
  if (dynamic_cast<const pg::ConfigError*>(&e) || dynamic_cast<const pg::IoError*>(&e) ||
      dynamic_cast<const pg::LayoutError*>(&e) || dynamic_cast<const pg::InputError*>(&e)) {
    return pgrpo::kUsage;
  }
  return pgrpo::kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared-prefix GRPO forward: equivalence, gradient and cost tools"};
  app.require_subcommand(1);

  pgrpo::EquivOptions equiv;
  bool corrupt_mask = false;
  std::string mutation = "none";
  auto* equiv_cmd = app.add_subcommand("equiv", "compare shared-prefix and repeated-prefix forwards");
  equiv_cmd->add_option("--config", equiv.config_path, "model config JSON (default: randomized per trial)");
  equiv_cmd->add_option("--prefix-len", equiv.prefix_len, "prefix length when --suffix-lens is given");
  equiv_cmd->add_option("--suffix-lens", equiv.suffix_lens, "comma-separated response lengths")->delimiter(',');
  equiv_cmd->add_option("--seed", equiv.seed, "base seed; trial i uses seed + i");
  equiv_cmd->add_option("--tol", equiv.tol, "max abs difference allowed")->capture_default_str();
  equiv_cmd->add_option("--trials", equiv.trials, "number of trials")->capture_default_str();
  equiv_cmd->add_option("--report", equiv.report_path, "JSON Lines report path")->capture_default_str();
  equiv_cmd->add_flag("--corrupt-mask", corrupt_mask, "debug: let responses attend to each other");
  equiv_cmd->add_option("--mutation", mutation,
                        "debug: none, cross_response_mask, sequential_positions, drop_group_factor");

  pgrpo::GradcheckOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "tape gradients against central finite differences");
  grad_cmd->add_option("--config", grad.config_path, "model config JSON (default: 1-layer toy)");
  grad_cmd->add_option("--prefix-len", grad.prefix_len)->capture_default_str();
  grad_cmd->add_option("--suffix-lens", grad.suffix_lens)->delimiter(',');
  grad_cmd->add_option("--seed", grad.seed);
  grad_cmd->add_option("--step", grad.h, "finite-difference step")->capture_default_str();
  grad_cmd->add_option("--tol", grad.tol, "max relative error allowed")->capture_default_str();

  pgrpo::FlopsOptions flops;
  auto* flops_cmd = app.add_subcommand("flops", "closed-form attention FLOPs sweep as CSV");
  flops_cmd->add_option("--lp", flops.prefix_lens, "prefix lengths")->delimiter(',');
  flops_cmd->add_option("--ratio", flops.ratios, "L_p / L_r ratios")->delimiter(',');
  flops_cmd->add_option("--group", flops.groups, "group sizes")->delimiter(',');
  flops_cmd->add_option("--d", flops.head_dim, "head dimension")->capture_default_str();
  flops_cmd->add_option("--n", flops.heads, "attention heads")->capture_default_str();
  flops_cmd->add_option("--out", flops.out_path, "CSV path (default: stdout)");
  flops_cmd->add_option("--plot", flops.plot_path, "optional SVG plot path");

  pgrpo::MemOptions mem;
  auto* mem_cmd = app.add_subcommand("mem", "peak tensor memory of forward+backward per mode as CSV");
  mem_cmd->add_option("--config", mem.config_path, "model config JSON");
  mem_cmd->add_option("--group", mem.groups, "group sizes")->delimiter(',');
  mem_cmd->add_option("--prefix-len", mem.prefix_len)->capture_default_str();
  mem_cmd->add_option("--suffix-len", mem.suffix_len)->capture_default_str();
  mem_cmd->add_option("--out", mem.out_path, "CSV path (default: stdout)");

  pgrpo::DemoOptions demo;
  auto* demo_cmd = app.add_subcommand("demo-train", "GRPO SGD steps in both modes in lockstep");
  demo_cmd->add_option("--steps", demo.steps)->capture_default_str();
  demo_cmd->add_option("--config", demo.config_path, "model config JSON");
  demo_cmd->add_option("--seed", demo.seed);
  demo_cmd->add_option("--lr", demo.lr)->capture_default_str();
  demo_cmd->add_option("--prefix-len", demo.prefix_len)->capture_default_str();
  demo_cmd->add_option("--suffix-lens", demo.suffix_lens)->delimiter(',');
  demo_cmd->add_flag("--mismatched-seeds", demo.mismatched_seeds, "debug: initialize the modes differently");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? pgrpo::kOk : pgrpo::kUsage;
  }

  try {
    if (*equiv_cmd) {
      equiv.mutation = corrupt_mask ? pg::Mutation::cross_response_mask : pg::parse_mutation(mutation);
      return pgrpo::run_equiv(equiv, std::cout);
    }
    if (*grad_cmd) return pgrpo::run_gradcheck(grad, std::cout);
    if (*flops_cmd) return pgrpo::run_flops(flops, std::cout);
    if (*mem_cmd) return pgrpo::run_mem(mem, std::cout);
    if (*demo_cmd) return pgrpo::run_demo_train(demo, std::cout);
  } catch (const pg::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return classify(e);
  }
  return pgrpo::kUsage;
}
