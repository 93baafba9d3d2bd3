#pragma once

// Deterministic random numbers.
//
// Two rules keep every run bit-reproducible across platforms and across
// serial/parallel execution:
//   1. all variates are produced by hand-rolled transforms of mt19937_64
//      output (std::*_distribution is not bit-portable between stdlibs);
//   2. every consumer derives its own stream from (base seed, context tags)
//      via SplitMix64 mixing, so no stream depends on call order elsewhere.

#include "imago/common.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

namespace imago {

/// One SplitMix64 step: advances the state and returns a mixed output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a tag into a seed. Tags can be integers or short strings.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + tag);
  return splitmix64(s);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  Fnv1a64 h;
  h.update(tag);
  return mix_seed(seed, h.value());
}

template <typename First, typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, First first, Rest... rest) {
  if constexpr (sizeof...(rest) == 0) {
    return mix_seed(seed, first);
  } else {
    return derive_seed(mix_seed(seed, first), rest...);
  }
}

/// Deterministic generator with the few variates this project needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in (0, 1]; never zero, safe as a log() argument.
  double uniform_pos() {
    return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform integer in [lo, hi], both inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    require(lo <= hi, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());  // full range
    // Rejection sampling for an unbiased draw.
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  /// Standard normal via Box-Muller (one value per call, no cached spare).
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(
          uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Random permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    shuffle(p);
    return p;
  }

  /// Matrix of iid standard normals, column-major fill order.
  Matrix normal_matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index c = 0; c < cols; ++c)
      for (Index r = 0; r < rows; ++r) m(r, c) = normal();
    return m;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace imago
