#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace vmae {

// Mixes any number of 64-bit words into one seed (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

// Seeded generator with platform-stable derived distributions. The standard
// <random> distributions are implementation-defined, so everything here is
// built on the raw mt19937_64 stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n); unbiased by rejection.
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Normal(0, stddev^2) resampled until within +-2 stddev.
  double truncated_normal(double stddev);
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// 0..n-1 in seeded random order.
std::vector<int> seeded_permutation(int n, std::uint64_t seed);

}  // namespace vmae
