#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sare/errors.hpp"

namespace sare {

// splitmix64 step; used to derive independent substream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic RNG with pinned sampling algorithms. std distributions are
// implementation-defined, so uniform/normal/categorical are spelled out here
// to keep artifacts byte-stable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1) with 53 bits
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller; one Gaussian per call, two uniforms consumed.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  // integer in [0, n)
  int uniform_int(int n) {
    if (n <= 0) throw NumericalError("Rng::uniform_int: n must be positive");
    return static_cast<int>(uniform01() * static_cast<double>(n));
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // index sampled proportionally to nonnegative weights; -1 if all zero
  int categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) return -1;
    double r = uniform01() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      r -= weights[i];
      if (r < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // independent substream keyed by tag, derived from the construction seed
  Rng fork(uint64_t tag) const { return Rng(mix_seed(seed_, tag)); }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace sare
