#pragma once

#include <cstdint>
#include <string_view>

namespace sctts {

// Mixes a label into a parent seed. Stable across platforms and releases:
// seeds derived here are baked into corpus files and checkpoints.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t value);

// Counter-based SplitMix64 stream. The whole state is (seed, counter), so a
// generator is cheap to copy and pass by value; copies replay the same stream.
// Normals come from Box-Muller over that stream, which keeps the sequence
// identical on every standard library.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;
  double normal() noexcept;

  // Independent stream labelled by `label`, derived from this generator's seed
  // (not from its position), so sub-streams do not shift when callers consume
  // more or fewer draws from the parent.
  SeededRng child(std::string_view label) const noexcept {
    return SeededRng(derive_seed(seed_, label));
  }
  SeededRng child(std::uint64_t index) const noexcept {
    return SeededRng(derive_seed(seed_, index));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sctts
