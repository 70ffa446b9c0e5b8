#pragma once

#include <cmath>
#include <cstdint>

namespace pcsc {

// Counter-based generator: output i is a 64-bit hash of (key, i), so a stream
// is fully determined by its key and position. Replication streams are derived
// as key = seed ^ r. The mix is SplitMix64 (Steele, Lea, Flood 2014) with
// Stafford's mix13 finalizer.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t start = 0)
      : key_(key), counter_(start) {}

  static CounterRng stream(std::uint64_t seed, std::uint64_t replication) {
    return CounterRng(seed ^ replication);
  }

  std::uint64_t next_u64() {
    std::uint64_t z = key_ + (++counter_) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform on (0,1]; never returns 0 so log() is safe.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the second deviate of each pair is cached.
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace pcsc
