#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace tbps {

// Counter-based generator: draw i is splitmix64(seed, i). All distributions
// are implemented here rather than with <random> so that a seed reproduces the
// same sequence regardless of the standard library in use.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal (Box-Muller, one output per pair of uniforms).
  double normal();

  // Normal with standard deviation `stddev`, resampled outside +-2 stddev.
  double truncated_normal(double stddev);

  // Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n);

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  // Independent generator for a named sub-stream, e.g. one per epoch.
  Rng fork(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace tbps
