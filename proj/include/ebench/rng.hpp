#pragma once

#include <cstdint>
#include <vector>

namespace ebench {

// Deterministic random source (xoshiro256**). All sampling routines are
// implemented here rather than with <random> distributions so that streams
// are bit-identical across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Counter-based stream derivation: derive(master, i) and derive(master, j)
  // give decorrelated, reproducible streams for i != j.
  static Rng derive(std::uint64_t master, std::uint64_t stream);

  std::uint64_t next_u64();

  // Uniform on [0, 1).
  double uniform();

  // Uniform on (0, 1), never returns an exact endpoint.
  double uniform_open();

  // Unbiased integer on [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via inverse-CDF transform.
  double normal();

  bool bernoulli(double p);

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices from [0, n), returned in ascending order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                      std::size_t k);

 private:
  std::uint64_t s_[4];
};

// splitmix64 avalanche, used for seeding and stream derivation.
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace ebench
