#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "prefixgroup/config.hpp"
#include "prefixgroup/equiv.hpp"

namespace pgrpo {

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

struct EquivOptions {
  std::string config_path;
  std::size_t prefix_len = 8;
  std::vector<std::size_t> suffix_lens;  // empty: randomized layouts
  std::uint64_t seed = 0;
  double tol = 1e-9;
  std::size_t trials = 50;
  std::string report_path = "equiv_report.jsonl";
  pg::Mutation mutation = pg::Mutation::none;
};

struct GradcheckOptions {
  std::string config_path;
  std::size_t prefix_len = 5;
  std::vector<std::size_t> suffix_lens{3, 4, 2};
  std::uint64_t seed = 0;
  double h = 1e-5;
  double tol = 1e-5;
};

struct FlopsOptions {
  std::vector<std::uint64_t> prefix_lens{4096, 8192, 16384};
  std::vector<double> ratios{1, 2, 4, 8, 16, 32, 64};
  std::vector<std::uint64_t> groups{2, 4, 8, 16};
  std::uint64_t head_dim = 128;
  std::uint64_t heads = 32;
  std::string out_path;  // empty: stdout
  std::string plot_path;
};

struct MemOptions {
  std::string config_path;
  std::vector<std::size_t> groups{1, 2, 4, 8};
  std::size_t prefix_len = 64;
  std::size_t suffix_len = 16;
  std::string out_path;  // empty: stdout
};

struct DemoOptions {
  std::string config_path;
  std::size_t steps = 5;
  std::uint64_t seed = 0;
  double lr = 0.05;
  std::size_t prefix_len = 8;
  std::vector<std::size_t> suffix_lens{3, 5, 4, 6};
  double max_divergence = 1e-7;
  bool mismatched_seeds = false;
};

// Each command reports progress to `out` and returns an ExitCode. pg::Error
// subclasses propagate to the caller.
int run_equiv(const EquivOptions& opts, std::ostream& out);
int run_gradcheck(const GradcheckOptions& opts, std::ostream& out);
int run_flops(const FlopsOptions& opts, std::ostream& out);
int run_mem(const MemOptions& opts, std::ostream& out);
int run_demo_train(const DemoOptions& opts, std::ostream& out);

}  // namespace pgrpo
