#include <benchmark/benchmark.h>

#include "prefixgroup/cost.hpp"
#include "prefixgroup/equiv.hpp"
#include "prefixgroup/grpo.hpp"

namespace {

pg::ModelConfig bench_config() {
  pg::ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 4;
  c.head_dim = 16;
  c.ffn_dim = 128;
  c.vocab_size = 64;
  c.seed = 1;
  return c;
}

// Args: group size, prefix length. Responses are 16 tokens.
template <pg::ForwardMode Mode>
void BM_ForwardBackward(benchmark::State& state) {
  const auto config = bench_config();
  const auto g = static_cast<std::size_t>(state.range(0));
  const pg::GroupLayout layout(static_cast<std::size_t>(state.range(1)), std::vector<std::size_t>(g, 16));
  const auto data = pg::make_trial_data(config, layout, 7);
  const auto params = pg::Parameters<double>::init(config);
  const auto adv = pg::compute_advantages(data.rewards);
  const auto input = Mode == pg::ForwardMode::shared ? pg::build_shared_input(data.prefix, data.responses)
                                                     : pg::build_repeated_input(data.prefix, data.responses);
  for (auto _ : state) {
    auto eval = pg::evaluate_objective<double>(config, params, input, adv);
    benchmark::DoNotOptimize(eval.objective);
  }
  state.counters["tokens"] = static_cast<double>(input.tokens.size());
  state.counters["peak_bytes"] = static_cast<double>(pg::peak_memory<double>(config, layout, Mode));
  state.counters["matmul_flops"] =
      static_cast<double>(pg::measured_flops<double>(config, layout, Mode).matmul_total());
}

void group_args(benchmark::internal::Benchmark* b) {
  for (int lp : {64, 256})
    for (int g : {1, 2, 4, 8}) b->Args({g, lp});
  b->ArgNames({"G", "L_p"})->Unit(benchmark::kMillisecond);
}

BENCHMARK_TEMPLATE(BM_ForwardBackward, pg::ForwardMode::repeated)->Apply(group_args);
BENCHMARK_TEMPLATE(BM_ForwardBackward, pg::ForwardMode::shared)->Apply(group_args);

void BM_ClosedFormSweep(benchmark::State& state) {
  const pg::SweepGrid grid{{4096, 8192, 16384}, {1, 2, 4, 8, 16, 32, 64}, {2, 4, 8, 16}};
  for (auto _ : state) {
    auto rows = pg::sweep(grid);
    benchmark::DoNotOptimize(rows.data());
  }
}
BENCHMARK(BM_ClosedFormSweep);

}  // namespace

BENCHMARK_MAIN();
