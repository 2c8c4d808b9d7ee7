#pragma once

#include <cstdint>
#include <vector>

namespace otmatch {

// splitmix64 (Steele et al., "Fast splittable pseudorandom number
// generators"). Small, seedable, identical output on every platform.
// Every piece of randomness in the project flows through one of these,
// seeded from the single root seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); modulo bias is negligible for the small n used here.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller without the cached spare, so draws stay reproducible.
  double normal();

  // Derive an independent substream.
  Rng fork(std::uint64_t stream) {
    return Rng(state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1)) ^ next_u64());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace otmatch
