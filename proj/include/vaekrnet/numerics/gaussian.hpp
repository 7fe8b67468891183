#pragma once

#include "vaekrnet/numerics/ops.hpp"

namespace vkr {

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Row-wise standard normal log-density: (M x d) -> (M x 1).
Var std_normal_log_pdf(const Var& z);
Tensor std_normal_log_pdf(const Tensor& z);

/// Row-wise log N(x; mean, diag(exp(log_std)^2)). mean and log_std may be
/// M x d or broadcast rows.
Var diag_gauss_log_pdf(const Var& x, const Var& mean, const Var& log_std);

}  // namespace vkr
