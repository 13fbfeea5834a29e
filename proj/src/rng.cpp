#include "advbench/rng.hpp"

#include <cmath>

#include "advbench/errors.hpp"

namespace advbench {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream) {
  uint64_t s = seed;
  uint64_t a = splitmix64(s);
  s = a ^ (stream * 0xD1B54A32D192ED03ull + 0x2545F4914F6CDD1Dull);
  return splitmix64(s);
}

Rng::Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

uint64_t Rng::next_u64() { return eng_(); }

float Rng::uniform() {
  // Top 24 bits -> [0, 1) on the float grid.
  return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f;
}

float Rng::uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

float Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller on uniforms from the raw stream.
  float u1 = 0.0f;
  do {
    u1 = uniform();
  } while (u1 <= 0.0f);
  float u2 = uniform();
  float r = std::sqrt(-2.0f * std::log(u1));
  float theta = 6.28318530717958647692f * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

int64_t Rng::below(int64_t n) {
  if (n <= 0) throw EngineError("Rng::below requires n > 0");
  uint64_t un = static_cast<uint64_t>(n);
  // Rejection sampling to avoid modulo bias.
  uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

}  // namespace advbench
