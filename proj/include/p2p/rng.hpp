// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace p2p {

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Inclusive range.
  long uniform_int(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream; deterministic in (parent state, stream id).
  Rng fork(std::uint64_t stream) { return Rng(mix_seed(engine_() ^ mix_seed(stream))); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace p2p
