#pragma once

#include <cstdint>
#include <random>

namespace selfens {

/// SplitMix64 finalizer; used to derive independent seeds from (seed, index)
/// tuples so that per-sample streams do not depend on scheduling.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded random source with bit-portable sampling helpers. The engine is
/// std::mt19937_64; the distributions are written out here because the
/// standard ones are not guaranteed to agree across library vendors.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix_seed(seed, 0)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// A new generator whose stream depends only on this generator's seed and
  /// `stream`, never on how many values have been drawn so far.
  Rng split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream + 1)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  bool bernoulli(double p);
  /// Standard normal via Box-Muller.
  double normal();

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

template <typename RandomIt> void shuffle(RandomIt first, RandomIt last, Rng &rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = rng.uniform_int(0, i);
    std::swap(first[i], first[j]);
  }
}

} // namespace selfens
