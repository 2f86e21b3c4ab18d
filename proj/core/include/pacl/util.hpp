#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace pacl {

// Deterministic random source. All distribution transforms are implemented
// here rather than with std:: distributions, whose output is
// implementation-defined; a given seed yields the same stream everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

  uint64_t next() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi]. Modulo bias is negligible for the small
  // ranges used here.
  int64_t randint(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(gen_() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  // so the stream position is a pure function of the call count.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(randint(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream keyed off the constructor seed; used to
  // partition work (e.g. one stream per generated sample) so parallel
  // generation stays deterministic.
  Rng derive(uint64_t stream) const {
    uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 1));
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
// independent; results written into preallocated slots keep the output
// deterministic regardless of thread count.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace pacl
