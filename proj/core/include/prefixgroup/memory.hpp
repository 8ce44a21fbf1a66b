#pragma once

#include <cstddef>
#include <limits>
#include <new>
#include <vector>

namespace pg {

// Live/peak byte accounting for tensor buffers. A tracker is installed for the
// current thread with MemoryScope; buffers allocated while a scope is active
// report to that tracker for their whole lifetime, so the tracker must outlive
// every buffer it has seen.
class MemoryTracker {
 public:
  void on_allocate(std::size_t bytes) noexcept;
  void on_deallocate(std::size_t bytes) noexcept;

  std::size_t live_bytes() const noexcept { return live_; }
  std::size_t peak_bytes() const noexcept { return peak_; }
  std::size_t allocations() const noexcept { return allocations_; }

  // Restarts peak tracking from the current live level.
  void reset_peak() noexcept { peak_ = live_; }

  static MemoryTracker* current() noexcept;

 private:
  friend class MemoryScope;
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
  std::size_t allocations_ = 0;
};

class MemoryScope {
 public:
  explicit MemoryScope(MemoryTracker& tracker) noexcept;
  ~MemoryScope();
  MemoryScope(const MemoryScope&) = delete;
  MemoryScope& operator=(const MemoryScope&) = delete;

 private:
  MemoryTracker* previous_;
};

template <typename T>
class CountingAllocator {
 public:
  using value_type = T;

  CountingAllocator() noexcept : tracker_(MemoryTracker::current()) {}
  template <typename U>
  CountingAllocator(const CountingAllocator<U>& other) noexcept : tracker_(other.tracker()) {}

  T* allocate(std::size_t n) {
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    T* p = static_cast<T*>(::operator new(n * sizeof(T)));
    if (tracker_ != nullptr) tracker_->on_allocate(n * sizeof(T));
    return p;
  }

  void deallocate(T* p, std::size_t n) noexcept {
    if (tracker_ != nullptr) tracker_->on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  // Copies made while a different scope is active report to that scope.
  CountingAllocator select_on_container_copy_construction() const noexcept { return {}; }

  MemoryTracker* tracker() const noexcept { return tracker_; }

  template <typename U>
  bool operator==(const CountingAllocator<U>& other) const noexcept {
    return tracker_ == other.tracker();
  }

 private:
  MemoryTracker* tracker_;
};

template <typename T>
using Buffer = std::vector<T, CountingAllocator<T>>;

}  // namespace pg
