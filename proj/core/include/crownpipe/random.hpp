#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace crownpipe {

// Mixes a seed with stream identifiers (e.g. segment id, copy index) so that
// each randomized unit of work owns an independent, order-free stream.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept;

// Engine plus distribution code that is identical across standard libraries;
// the <random> distributions are implementation-defined, the engine is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace crownpipe
