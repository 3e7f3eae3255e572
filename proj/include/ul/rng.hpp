#pragma once

#include <cstdint>
#include <vector>

namespace ul {

// SplitMix64 generator. Chosen over std:: distributions because the
// standard leaves normal_distribution's algorithm implementation-defined;
// this sequence is reproducible on any conforming compiler.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0,1) with 53 random mantissa bits.
  double uniform();

  // Uniform integer in [0, n). n must be positive. Rejection sampling,
  // so the distribution is exact.
  int uniform_int(int n);

  // Standard normal via Box-Muller on uniform(). The pair's second value
  // is cached, so draws come two at a time from the underlying stream.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace ul
