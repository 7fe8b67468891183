#pragma once

#include <cstddef>
#include <unordered_map>

#include "vaekrnet/numerics/autodiff.hpp"

namespace vkr {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are keyed by parameter id and created on
/// first use.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// Applies one update to every parameter in `params` using `grads`.
  /// Parameters missing from `grads` see a zero gradient.
  void step(const ParameterList& params, const Gradients& grads);

  std::size_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  struct Moments {
    Tensor first;
    Tensor second;
  };

  AdamConfig config_;
  std::size_t steps_ = 0;
  std::unordered_map<ParamId, Moments> moments_;
};

}  // namespace vkr
