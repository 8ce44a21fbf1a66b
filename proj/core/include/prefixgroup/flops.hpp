#pragma once

#include <cstdint>

namespace pg {

// Which part of the network a counted operation belongs to. Attention covers
// the score (q.k) and mixing (p.v) products; projection covers every dense
// matmul against a weight; elementwise covers softmax/norm/activation work.
enum class FlopKind { attention, projection, elementwise };

struct FlopTally {
  std::uint64_t attention = 0;
  std::uint64_t projection = 0;
  std::uint64_t elementwise = 0;

  std::uint64_t matmul_total() const { return attention + projection; }
};

// Forward-pass operation counter. Convention: 2 FLOPs per multiply-accumulate.
// Attention products count only mask-visible (query, key) pairs.
class FlopCounter {
 public:
  void add(FlopKind kind, std::uint64_t flops) noexcept;
  const FlopTally& tally() const noexcept { return tally_; }
  void reset() noexcept { tally_ = {}; }

  static FlopCounter* current() noexcept;

 private:
  FlopTally tally_;
};

// Installs a counter for the current thread.
class FlopScope {
 public:
  explicit FlopScope(FlopCounter& counter) noexcept;
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopCounter* previous_;
};

// Reports to the active counter, if any.
void count_flops(FlopKind kind, std::uint64_t flops) noexcept;

}  // namespace pg
