#include "vaekrnet/numerics/rng.hpp"

namespace vkr {

Tensor gauss_sample(Rng& rng, const Shape& shape) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.normal();
  return t;
}

}  // namespace vkr
