#include "prefixgroup/flops.hpp"

namespace pg {
namespace {
thread_local FlopCounter* active_counter = nullptr;
}

void FlopCounter::add(FlopKind kind, std::uint64_t flops) noexcept {
  switch (kind) {
    case FlopKind::attention: tally_.attention += flops; break;
    case FlopKind::projection: tally_.projection += flops; break;
    case FlopKind::elementwise: tally_.elementwise += flops; break;
  }
}

FlopCounter* FlopCounter::current() noexcept { return active_counter; }

FlopScope::FlopScope(FlopCounter& counter) noexcept : previous_(active_counter) {
  active_counter = &counter;
}

FlopScope::~FlopScope() { active_counter = previous_; }

void count_flops(FlopKind kind, std::uint64_t flops) noexcept {
  if (active_counter != nullptr) active_counter->add(kind, flops);
}

}  // namespace pg
