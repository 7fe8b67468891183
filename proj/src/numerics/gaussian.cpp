#include "vaekrnet/numerics/gaussian.hpp"

namespace vkr {

using namespace ops;

Var std_normal_log_pdf(const Var& z) {
  const double c = -kHalfLog2Pi * static_cast<double>(z.cols());
  return add_scalar(mul_scalar(sum_rows(square(z)), -0.5), c);
}

Tensor std_normal_log_pdf(const Tensor& z) {
  Tensor out = Tensor::matrix(z.rows(), 1);
  const double c = -kHalfLog2Pi * static_cast<double>(z.cols());
  // Scale and shift as separate passes, matching the Var overload bit for bit
  // even when the compiler contracts multiply-adds.
  const RowMatrix squares = z.matrix().array().square().matrix();
  out.matrix() = squares.rowwise().sum();
  out.matrix() *= -0.5;
  out.matrix().array() += c;
  return out;
}

Var diag_gauss_log_pdf(const Var& x, const Var& mean, const Var& log_std) {
  const Var u = (x - mean) / ops::exp(log_std);
  return std_normal_log_pdf(u) - sum_rows(log_std);
}

}  // namespace vkr
