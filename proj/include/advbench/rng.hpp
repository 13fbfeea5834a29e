#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace advbench {

// SplitMix64 mixing step; used to derive independent seed streams.
uint64_t splitmix64(uint64_t& state);
uint64_t derive_seed(uint64_t seed, uint64_t stream);

// Deterministic random source. All engine randomness is generated here from
// the raw mt19937_64 stream so results never depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  float uniform();                     // [0, 1), 24-bit resolution
  float uniform(float lo, float hi);   // [lo, hi)
  float normal();                      // standard normal (Box-Muller)
  int64_t below(int64_t n);            // uniform integer in [0, n)

  // Independent child stream; depends only on the constructor seed.
  Rng split(uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  uint64_t seed() const { return seed_; }

  // Fisher-Yates with this generator.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(below(i + 1))]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

}  // namespace advbench
