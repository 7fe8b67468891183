#include "vaekrnet/numerics/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vkr {

namespace {
#if defined(__GLIBC__)
// Batched tapes allocate and free many multi-megabyte buffers per step. With
// the default thresholds each of them is a fresh mmap and page-fault storm;
// keeping them on the heap roughly halves the step time.
const bool heap_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif
}  // namespace

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 is not supported");
  values_.assign(shape_product(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (shape_.size() > 2) throw std::invalid_argument("Tensor: rank > 2 is not supported");
  if (shape_product(shape_) != values_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape_) + " does not match " +
                                std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{1, n}, std::move(values));
}

Tensor Tensor::from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Tensor t = matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.matrix() = m;
  return t;
}

std::size_t Tensor::rows() const {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw std::invalid_argument("Tensor::item on tensor of shape " + shape_string(shape_));
  }
  return values_[0];
}

std::vector<double> Tensor::row_values(std::size_t r) const {
  const std::size_t c = cols();
  return {values_.begin() + static_cast<std::ptrdiff_t>(r * c),
          values_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c)};
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::check_finite(const std::string& context) const {
  if (!all_finite()) throw NonFiniteError(context + ": non-finite value");
}

}  // namespace vkr
