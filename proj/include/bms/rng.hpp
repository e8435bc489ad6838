#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bms/tensor.hpp"

namespace bms {

/// Seeded stream of uniform and standard-normal draws. The full engine state
/// can be exported and restored, which is what checkpoint resume relies on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller; no cached second value, so the stream
  /// position is the engine state alone).
  double normal();
  void fill_normal(std::span<double> out);
  Tensor normal(Shape shape);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  /// Derives an independent seed for a sub-stream (e.g. per-restart inits).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

  std::vector<std::uint32_t> state() const;
  void set_state(std::span<const std::uint32_t> words);

 private:
  std::mt19937 engine_;
};

}  // namespace bms
