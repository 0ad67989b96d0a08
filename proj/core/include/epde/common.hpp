#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace epde {

// Base error for the library. UsageError maps to CLI exit code 2,
// NumericalError to exit code 1.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

class NumericalError : public Error {
public:
  using Error::Error;
};

// 64-bit counter-based generator "epde-sm64-v1".
//
// Draw i (1-based) is splitmix64_mix(seed + i * 0x9E3779B97F4A7C15). Draws
// depend only on (seed, i), so any two implementations of the recipe produce
// identical streams. Documented in the README so seeds reproduce across
// languages.
class Rng {
public:
  explicit Rng(uint64_t seed) : seed_(seed) {}

  static uint64_t mix(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() {
    ++counter_;
    return mix(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
  }

  // Uniform in [0, 1), 53-bit mantissa.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double next_normal();

  // Uniform integer in [0, n). Modulo reduction: bias is < n/2^64 and the
  // result is platform-independent, which matters more here.
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw Error("Rng::next_below: n must be positive");
    return next_u64() % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child seed for a named sub-stage; stable across runs.
  uint64_t derive(std::string_view tag) const;

private:
  uint64_t seed_ = 0;
  uint64_t counter_ = 0;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(std::string_view s);

// q in [0,1]; linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

// Runs fn(i) for i in [0, n). threads <= 1 runs inline. Each index is
// processed exactly once; callers must write to disjoint outputs.
void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn);

}  // namespace epde
