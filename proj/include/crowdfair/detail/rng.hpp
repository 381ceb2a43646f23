#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace crowdfair::detail {

// splitmix64-seeded xoshiro256++. All sampling helpers are hand-rolled so
// that a seed pins the produced stream irrespective of the standard library
// implementation (std::*_distribution is not specified bit-for-bit).
class Rng {
public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return uniform01() < p; }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_below(std::uint64_t n) {
    // Rejection sampling on the top bits keeps the draw exactly uniform.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller; one value per call keeps the stream position predictable.
    const double u1 = std::max(uniform01(), 0x1.0p-53);
    const double u2 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) *
                     std::cos(2.0 * std::numbers::pi * u2);
    return mean + stddev * z;
  }

  // Draws k distinct values from [0, n) via a partial Fisher-Yates pass.
  std::vector<std::int32_t> sample_without_replacement(std::int32_t n, std::int32_t k,
                                                       std::vector<std::int32_t>& scratch) {
    scratch.resize(static_cast<std::size_t>(n));
    for (std::int32_t i = 0; i < n; ++i) scratch[static_cast<std::size_t>(i)] = i;
    std::vector<std::int32_t> out(static_cast<std::size_t>(k));
    for (std::int32_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::int32_t>(uniform_below(static_cast<std::uint64_t>(n - i)));
      std::swap(scratch[static_cast<std::size_t>(i)], scratch[static_cast<std::size_t>(j)]);
      out[static_cast<std::size_t>(i)] = scratch[static_cast<std::size_t>(i)];
    }
    return out;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = uniform_below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace crowdfair::detail
