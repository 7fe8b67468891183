#include "vaekrnet/numerics/ops.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/LU>

namespace vkr::ops {

namespace {

struct BroadcastShape {
  std::size_t rows, cols;
  std::size_t a_rows, a_cols, b_rows, b_cols;
};

std::size_t broadcast_dim(std::size_t x, std::size_t y, const char* what) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  throw std::invalid_argument(std::string("broadcast: incompatible ") + what + " " +
                              std::to_string(x) + " vs " + std::to_string(y));
}

BroadcastShape broadcast_shape(const Tensor& a, const Tensor& b) {
  return {broadcast_dim(a.rows(), b.rows(), "rows"), broadcast_dim(a.cols(), b.cols(), "cols"),
          a.rows(), a.cols(), b.rows(), b.cols()};
}

inline std::size_t bindex(std::size_t r, std::size_t c, std::size_t rows, std::size_t cols) {
  return (rows == 1 ? 0 : r) * cols + (cols == 1 ? 0 : c);
}

// Elementwise binary op with broadcasting. `f` computes the value; `da`/`db`
// compute partials given (a, b, out).
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, F f, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const BroadcastShape s = broadcast_shape(av, bv);
  Tensor out = Tensor::matrix(s.rows, s.cols);
  const bool same = av.rows() == s.rows && av.cols() == s.cols && bv.rows() == s.rows &&
                    bv.cols() == s.cols;
  const bool row_b = !same && av.rows() == s.rows && av.cols() == s.cols && bv.rows() == 1 && bv.cols() == s.cols;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  } else if (row_b) {
    for (std::size_t r = 0; r < s.rows; ++r) {
      const double* ar = av.values().data() + r * s.cols;
      double* o = out.values().data() + r * s.cols;
      for (std::size_t c = 0; c < s.cols; ++c) o[c] = f(ar[c], bv[c]);
    }
  } else {
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t c = 0; c < s.cols; ++c) {
        out[r * s.cols + c] = f(av[bindex(r, c, s.a_rows, s.a_cols)], bv[bindex(r, c, s.b_rows, s.b_cols)]);
      }
    }
  }
  Tape* tape = &a.tape();
  const int ia = a.index();
  const int ib = b.index();
  return tape->record(std::move(out), {a, b},
                      [tape, ia, ib, s, same, row_b, da, db](const Tensor& o, const Tensor& g,
                                                             std::vector<Tensor*>& grads) {
                        const Tensor& av = tape->value(ia);
                        const Tensor& bv = tape->value(ib);
                        Tensor* ga = grads[0];
                        Tensor* gb = grads[1];
                        if (same) {
                          if (ga) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * da(av[i], bv[i], o[i]);
                          }
                          if (gb) {
                            for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * db(av[i], bv[i], o[i]);
                          }
                          return;
                        }
                        if (row_b) {
                          for (std::size_t r = 0; r < s.rows; ++r) {
                            const std::size_t base = r * s.cols;
                            if (ga) {
                              for (std::size_t c = 0; c < s.cols; ++c) {
                                (*ga)[base + c] += g[base + c] * da(av[base + c], bv[c], o[base + c]);
                              }
                            }
                            if (gb) {
                              for (std::size_t c = 0; c < s.cols; ++c) {
                                (*gb)[c] += g[base + c] * db(av[base + c], bv[c], o[base + c]);
                              }
                            }
                          }
                          return;
                        }
                        for (std::size_t r = 0; r < s.rows; ++r) {
                          for (std::size_t c = 0; c < s.cols; ++c) {
                            const std::size_t i = r * s.cols + c;
                            const std::size_t i_a = bindex(r, c, s.a_rows, s.a_cols);
                            const std::size_t i_b = bindex(r, c, s.b_rows, s.b_cols);
                            if (ga) (*ga)[i_a] += g[i] * da(av[i_a], bv[i_b], o[i]);
                            if (gb) (*gb)[i_b] += g[i] * db(av[i_a], bv[i_b], o[i]);
                          }
                        }
                      });
}

// Elementwise unary op; `d` gives the derivative from (x, out).
template <class F, class D>
Var unary(const Var& a, F f, D d) {
  const Tensor& av = a.value();
  Tensor out(Shape{av.rows(), av.cols()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  Tape* tape = &a.tape();
  const int ia = a.index();
  return tape->record(std::move(out), {a},
                      [tape, ia, d](const Tensor& o, const Tensor& g, std::vector<Tensor*>& grads) {
                        const Tensor& av = tape->value(ia);
                        Tensor& ga = *grads[0];
                        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(av[i], o[i]);
                      });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var neg(const Var& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(av.cols()) + " vs " +
                                std::to_string(bv.rows()));
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  if (av.cols() > 0) out.matrix().noalias() = av.matrix() * bv.matrix();
  Tape* tape = &a.tape();
  const int ia = a.index();
  const int ib = b.index();
  return tape->record(std::move(out), {a, b},
                      [tape, ia, ib](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                        const Tensor& av = tape->value(ia);
                        const Tensor& bv = tape->value(ib);
                        if (av.cols() == 0) return;
                        if (grads[0]) grads[0]->matrix().noalias() += g.matrix() * bv.matrix().transpose();
                        if (grads[1]) grads[1]->matrix().noalias() += av.matrix().transpose() * g.matrix();
                      });
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.cols(), av.rows());
  out.matrix() = av.matrix().transpose();
  return a.tape().record(std::move(out), {a},
                         [](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           grads[0]->matrix() += g.matrix().transpose();
                         });
}

Var inverse(const Var& a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw std::invalid_argument("inverse: matrix is not square");
  const Eigen::MatrixXd m = av.matrix();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) throw std::domain_error("inverse: singular matrix");
  Tensor out = Tensor::from_matrix(lu.inverse());
  return a.tape().record(std::move(out), {a},
                         [](const Tensor& o, const Tensor& g, std::vector<Tensor*>& grads) {
                           // d(A^-1) = -A^-1 dA A^-1
                           const Eigen::MatrixXd inv = o.matrix();
                           grads[0]->matrix() -= inv.transpose() * g.matrix() * inv.transpose();
                         });
}

Var diagonal(const Var& a) {
  const Tensor& av = a.value();
  if (av.rows() != av.cols()) throw std::invalid_argument("diagonal: matrix is not square");
  const std::size_t k = av.rows();
  Tensor out = Tensor::matrix(1, k);
  for (std::size_t i = 0; i < k; ++i) out[i] = av.at(i, i);
  return a.tape().record(std::move(out), {a},
                         [k](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           for (std::size_t i = 0; i < k; ++i) grads[0]->at(i, i) += g[i];
                         });
}

Var tanh(const Var& a) {
  // (1 - e) / (1 + e) with e = exp(-2|x|) vectorizes through Eigen's exp;
  // the absolute error stays at rounding level.
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  const auto x = Eigen::Map<const Eigen::ArrayXd>(av.values().data(), static_cast<Eigen::Index>(av.size()));
  const Eigen::ArrayXd e = (-2.0 * x.abs()).exp();
  Eigen::Map<Eigen::ArrayXd>(out.values().data(), static_cast<Eigen::Index>(out.size())) =
      ((1.0 - e) / (1.0 + e)) * x.sign();
  return a.tape().record(std::move(out), {a},
                         [](const Tensor& o, const Tensor& g, std::vector<Tensor*>& grads) {
                           const auto n = static_cast<Eigen::Index>(o.size());
                           const auto ov = Eigen::Map<const Eigen::ArrayXd>(o.values().data(), n);
                           Eigen::Map<Eigen::ArrayXd>(grads[0]->values().data(), n) +=
                               Eigen::Map<const Eigen::ArrayXd>(g.values().data(), n) * (1.0 - ov * ov);
                         });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var log_abs(const Var& a) {
  return unary(a, [](double x) { return std::log(std::abs(x)); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

Var sum_rows(const Var& a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(av.rows(), 1);
  out.matrix() = av.matrix().rowwise().sum();
  return a.tape().record(std::move(out), {a},
                         [](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           grads[0]->matrix().colwise() += Eigen::Map<const Eigen::VectorXd>(g.values().data(), static_cast<Eigen::Index>(g.size()));
                         });
}

Var sum(const Var& a) {
  const Tensor& av = a.value();
  Tensor out = Tensor::matrix(1, 1, av.matrix().sum());
  return a.tape().record(std::move(out), {a},
                         [](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           grads[0]->matrix().array() += g[0];
                         });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return mul_scalar(sum(a), 1.0 / n);
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.cols()) throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor out = Tensor::matrix(av.rows(), count);
  out.matrix() = av.matrix().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return a.tape().record(std::move(out), {a},
                         [begin, count](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           grads[0]->matrix().middleCols(static_cast<Eigen::Index>(begin),
                                                         static_cast<Eigen::Index>(count)) += g.matrix();
                         });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.rows()) throw std::invalid_argument("slice_rows: range out of bounds");
  Tensor out = Tensor::matrix(count, av.cols());
  out.matrix() = av.matrix().middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return a.tape().record(std::move(out), {a},
                         [begin, count](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
                           grads[0]->matrix().middleRows(static_cast<Eigen::Index>(begin),
                                                         static_cast<Eigen::Index>(count)) += g.matrix();
                         });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    out.matrix().middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) =
        p.value().matrix();
    offset += p.cols();
  }
  return parts.front().tape().record(
      std::move(out), parts, [widths](const Tensor&, const Tensor& g, std::vector<Tensor*>& grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          if (grads[k]) {
            grads[k]->matrix() += g.matrix().middleCols(static_cast<Eigen::Index>(off),
                                                        static_cast<Eigen::Index>(widths[k]));
          }
          off += widths[k];
        }
      });
}

}  // namespace vkr::ops
