#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace drd {

// Deterministic pseudo-random generator built on splitmix64. The stream is a
// pure function of the seed and is identical across platforms, which keeps
// every pipeline stage bit-reproducible. Not cryptographic.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of entropy.
  double uniform01();

  // Uniform integer in [0, n), unbiased via rejection. n must be nonzero.
  std::uint64_t below(std::uint64_t n);

  // Box-Muller; consumes two uniforms per pair and caches the spare.
  double normal(double mean, double stddev);

  template <class T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);

// Child-stream derivation: one independent seed per (master, tag, index).
// Used to give every stage, query, and sample its own stream so that
// collection order and parallelism cannot change results.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::uint64_t index = 0);

}  // namespace drd
