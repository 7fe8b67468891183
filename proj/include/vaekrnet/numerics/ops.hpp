#pragma once

#include <vector>

#include "vaekrnet/numerics/autodiff.hpp"

// Differentiable primitives over the matrix view of tensors. Binary
// elementwise ops broadcast a 1-row, 1-column or 1x1 operand.
namespace vkr::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, double c);
Var mul_scalar(const Var& a, double c);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var inverse(const Var& a);
/// Diagonal of a square matrix as a 1 x k row.
Var diagonal(const Var& a);

Var tanh(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var log_abs(const Var& a);
Var square(const Var& a);
/// Clamp into [lo, hi]; zero gradient where clamped.
Var clamp(const Var& a, double lo, double hi);

/// Row-wise sum: (M x C) -> (M x 1).
Var sum_rows(const Var& a);
/// Sum over all entries -> 1 x 1.
Var sum(const Var& a);
Var mean(const Var& a);

Var slice_cols(const Var& a, std::size_t begin, std::size_t count);
Var concat_cols(const std::vector<Var>& parts);
/// Row block [begin, begin + count).
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double c) { return add_scalar(a, c); }
inline Var operator*(double c, const Var& a) { return mul_scalar(a, c); }

}  // namespace vkr::ops
