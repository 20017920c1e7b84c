#ifndef PROD_RNG_HPP_
#define PROD_RNG_HPP_

#include <cstdint>
#include <string_view>
#include <vector>

namespace prod {

// 64-bit FNV-1a. Used for token hashing and for deriving per-entity seeds;
// fixed here so that runs are reproducible across platforms.
std::uint64_t fnv1a64(std::string_view s);

// Stable seed derivation: substreams are named, never positional, so adding
// a consumer somewhere does not shift every other stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index);

// Deterministic splitmix64 stream. Deliberately not std::mt19937 +
// std::*_distribution: the standard leaves distribution algorithms
// unspecified, and checkpoints must be bit-identical across toolchains.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1), 53-bit resolution.
  double next_double();

  // Uniform in [0, bound) without modulo bias.
  std::uint64_t next_below(std::uint64_t bound);

  // Box-Muller with a cached spare.
  double next_gaussian(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

  // m distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace prod

#endif  // PROD_RNG_HPP_
