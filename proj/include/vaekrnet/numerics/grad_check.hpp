#pragma once

#include <functional>

#include "vaekrnet/numerics/autodiff.hpp"

namespace vkr {

/// Scalar loss built on a fresh tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckReport {
  /// max over entries of |ad - fd| / (|fd| + 1e-12)
  double max_relative_error = 0.0;
  /// max |ad - fd| / max |fd|; robust when some entries are ~0
  double normwise_relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

/// Compares reverse-mode gradients with central differences of step `h`.
/// Throws NonFiniteError if the loss is not finite at any probe.
GradCheckReport grad_check_report(const LossFn& fn, const ParameterList& params, double h = 1e-5);

/// Elementwise maximum relative error, see GradCheckReport.
double grad_check(const LossFn& fn, const ParameterList& params, double h = 1e-5);

/// Central-difference gradient of `fn` with respect to every entry of `params`.
std::vector<Tensor> finite_difference_gradient(const LossFn& fn, const ParameterList& params,
                                               double h = 1e-5);

}  // namespace vkr
