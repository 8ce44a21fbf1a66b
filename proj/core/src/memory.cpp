#include "prefixgroup/memory.hpp"

#include <algorithm>

namespace pg {
namespace {
thread_local MemoryTracker* active_tracker = nullptr;
}

void MemoryTracker::on_allocate(std::size_t bytes) noexcept {
  live_ += bytes;
  peak_ = std::max(peak_, live_);
  ++allocations_;
}

void MemoryTracker::on_deallocate(std::size_t bytes) noexcept { live_ -= std::min(bytes, live_); }

MemoryTracker* MemoryTracker::current() noexcept { return active_tracker; }

MemoryScope::MemoryScope(MemoryTracker& tracker) noexcept : previous_(active_tracker) {
  active_tracker = &tracker;
}

MemoryScope::~MemoryScope() { active_tracker = previous_; }

}  // namespace pg
