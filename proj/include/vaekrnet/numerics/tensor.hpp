#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace vkr {

using Shape = std::vector<std::size_t>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
/// SIMD-aligned storage: vectorized reductions then split their work the
/// same way for every allocation, so results do not depend on the address.
using AlignedValues = std::vector<double, Eigen::aligned_allocator<double>>;

/// Raised when a value that must be finite is NaN or infinite.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dense row-major array of doubles.
///
/// Every tensor can be viewed as a matrix: rank 0 is 1x1, rank 1 is a single
/// row, rank 2 is rows x cols. All differentiable operations work on that
/// matrix view, with rows indexing samples in a batch.
class Tensor {
 public:
  Tensor() : shape_{0}, values_{} {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }
  static Tensor row(std::vector<double> values);
  static Tensor from_matrix(const Eigen::Ref<const Eigen::MatrixXd>& m);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return values_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
  /// Value of a one-element tensor.
  double item() const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  MatrixMap matrix() { return MatrixMap(values_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(values_.data(), rows(), cols()); }
  Eigen::MatrixXd to_eigen() const { return matrix(); }

  std::vector<double> row_values(std::size_t r) const;
  bool all_finite() const;
  /// Throws NonFiniteError naming `context` if any value is NaN/Inf.
  void check_finite(const std::string& context) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  AlignedValues values_;
};

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

}  // namespace vkr
