#pragma once

#include <cstdint>
#include <random>

#include "vaekrnet/numerics/tensor.hpp"

namespace vkr {

/// Seeded generator. Two instances built from the same seed produce the
/// same stream; successive draws from one instance differ.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
  std::uint64_t next_seed() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// I.i.d. standard normal tensor of the given shape.
Tensor gauss_sample(Rng& rng, const Shape& shape);

}  // namespace vkr
