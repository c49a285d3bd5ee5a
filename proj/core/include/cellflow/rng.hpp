#pragma once

#include <array>
#include <cstdint>

namespace cellflow {

// Philox4x32-10 counter-based generator. A stream is addressed by
// (seed, stream, substream); streams never overlap, so per-path results do
// not depend on scheduling.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t seed, std::uint64_t stream, std::uint32_t substream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();
  // Uniform on (0, 1).
  double uniform();
  double normal();
  double exponential();

 private:
  void refill();

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> block_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable 64-bit mixing of a tag into a seed, for deriving independent seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace cellflow
