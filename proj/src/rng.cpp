#include "selfens/rng.hpp"

#include <cmath>
#include <numbers>

namespace selfens {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo)
    return lo;
  const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = range == 0 ? 0 : (~std::uint64_t{0} / range) * range;
  std::uint64_t x = engine_();
  while (limit != 0 && x >= limit)
    x = engine_();
  return lo + static_cast<std::int64_t>(range == 0 ? x : x % range);
}

bool Rng::bernoulli(double p) {
  if (p <= 0.0)
    return false;
  if (p >= 1.0)
    return true;
  return uniform() < p;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0)
    u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace selfens
