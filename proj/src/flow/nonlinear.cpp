#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vaekrnet/flow/layers.hpp"

namespace vkr {

using namespace ops;

namespace {

// Piecewise-linear density on a uniform grid of [0, 1] together with its
// cumulative integral at the nodes.
class Grid {
 public:
  explicit Grid(std::span<const double> nodes) : p_(nodes), cum_(nodes.size(), 0.0) {
    if (nodes.size() < 2) throw std::invalid_argument("piecewise density: need at least 2 nodes");
    bins_ = nodes.size() - 1;
    h_ = 1.0 / static_cast<double>(bins_);
    for (std::size_t b = 0; b < bins_; ++b) cum_[b + 1] = cum_[b] + 0.5 * h_ * (p_[b] + p_[b + 1]);
  }

  std::size_t bins() const { return bins_; }
  double h() const { return h_; }
  double node(std::size_t b) const { return p_[b]; }

  std::pair<std::size_t, double> locate(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(x * static_cast<double>(bins_)), bins_ - 1);
    return {b, x - static_cast<double>(b) * h_};
  }

  double cdf(std::size_t b, double u) const {
    return cum_[b] + p_[b] * u + (p_[b + 1] - p_[b]) * u * u / (2.0 * h_);
  }
  double density(std::size_t b, double u) const { return p_[b] + (p_[b + 1] - p_[b]) * u / h_; }
  double slope(std::size_t b) const { return (p_[b + 1] - p_[b]) / h_; }

  std::pair<std::size_t, double> invert(double target) const {
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
    std::size_t b = it == cum_.begin() ? 0 : static_cast<std::size_t>(it - cum_.begin()) - 1;
    b = std::min(b, bins_ - 1);
    const double c = target - cum_[b];
    const double dp = p_[b + 1] - p_[b];
    double disc = p_[b] * p_[b] + 2.0 * dp * c / h_;
    if (disc < 0.0) {
      if (disc < -1e-12 * p_[b] * p_[b]) throw std::domain_error("nonlinear inverse: negative discriminant");
      disc = 0.0;
    }
    const double denom = p_[b] + std::sqrt(disc);
    double u = denom > 0.0 ? 2.0 * c / denom : 0.0;
    const double tol = 1e-9 * h_;
    if (!(u >= -tol && u <= h_ + tol)) throw std::domain_error("nonlinear inverse: root outside its bin");
    u = std::clamp(u, 0.0, h_);
    return {b, u};
  }

  // Adds wF * dF/dp + wP * dp(x)/dp for a point in bin b at offset u. The
  // dependence of the cumulative offset on earlier nodes is deferred into
  // `bin_weight` and resolved by `finish`.
  void accumulate(std::size_t b, double u, double wf, double wp, double* grad, double* bin_weight) const {
    const double q = u * u / (2.0 * h_);
    grad[b] += wf * (u - q) + wp * (1.0 - u / h_);
    grad[b + 1] += wf * q + wp * u / h_;
    bin_weight[b] += wf;
  }

  // cum_b = h/2 * sum_{i<b} (p_i + p_{i+1}), so node j receives h/2 from
  // every bin b > j and another h/2 from every bin b >= j when j >= 1.
  void finish(const double* bin_weight, double* grad) const {
    double suffix = 0.0;  // sum over bins b > j
    for (std::size_t j = bins_ + 1; j-- > 0;) {
      const double at_j = j < bins_ ? bin_weight[j] : 0.0;
      grad[j] += 0.5 * h_ * suffix;
      if (j >= 1) grad[j] += 0.5 * h_ * (suffix + at_j);
      suffix += at_j;
    }
  }

 private:
  std::span<const double> p_;
  std::vector<double> cum_;
  std::size_t bins_ = 0;
  double h_ = 0.0;
};

std::vector<Grid> grids_for(const Tensor& nodes) {
  std::vector<Grid> grids;
  grids.reserve(nodes.rows());
  const std::size_t stride = nodes.cols();
  for (std::size_t i = 0; i < nodes.rows(); ++i) {
    grids.emplace_back(std::span<const double>(nodes.values().data() + i * stride, stride));
  }
  return grids;
}

// Records [mapped | log-det terms] for input `in` (M x k) and node values
// `nodes` (k x (B+1)). Forward maps y -> z with terms log p(x); inverse maps
// z -> y with terms -log p(x).
Var record_map(Tape& tape, const Var& in, const Var& nodes, double a, bool inverse) {
  const Tensor& iv = in.value();
  const Tensor& nv = nodes.value();
  const std::size_t m = iv.rows(), k = iv.cols();
  const std::vector<Grid> grids = grids_for(nv);
  Tensor out = Tensor::matrix(m, 2 * k);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double v = iv.at(r, i);
      if (!(std::abs(v) <= a)) {
        out.at(r, i) = v;
        continue;
      }
      const Grid& g = grids[i];
      if (!inverse) {
        const auto [b, u] = g.locate((v + a) / (2.0 * a));
        out.at(r, i) = 2.0 * a * g.cdf(b, u) - a;
        out.at(r, k + i) = std::log(g.density(b, u));
      } else {
        const auto [b, u] = g.invert((v + a) / (2.0 * a));
        out.at(r, i) = 2.0 * a * (static_cast<double>(b) * g.h() + u) - a;
        out.at(r, k + i) = -std::log(g.density(b, u));
      }
    }
  }
  Tape* tp = &tape;
  const int in_index = in.index();
  const int nodes_index = nodes.index();
  return tape.record(
      std::move(out), {in, nodes},
      [tp, in_index, nodes_index, a, inverse](const Tensor& outv, const Tensor& gout, std::vector<Tensor*>& grads) {
        const Tensor& x_in = tp->value(in_index);
        const Tensor& nv2 = tp->value(nodes_index);
        const std::size_t rows = x_in.rows(), width = x_in.cols();
        const std::vector<Grid> gs = grids_for(nv2);
        const std::size_t nb = nv2.cols() - 1;
        std::vector<double> bin_weight(width * nb, 0.0);
        Tensor* gin = grads[0];
        Tensor* gnodes = grads[1];
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t i = 0; i < width; ++i) {
            const double v = x_in.at(r, i);
            const double g_map = gout.at(r, i);
            if (!(std::abs(v) <= a)) {
              if (gin) gin->at(r, i) += g_map;
              continue;
            }
            const double g_log = gout.at(r, width + i);
            const Grid& g = gs[i];
            // Position on [0, 1]: input for forward, output for inverse.
            const double x = inverse ? (outv.at(r, i) + a) / (2.0 * a) : (v + a) / (2.0 * a);
            const auto [b, u] = g.locate(x);
            const double px = g.density(b, u);
            const double slope = g.slope(b);
            double wf, wp;
            if (!inverse) {
              if (gin) gin->at(r, i) += g_map * px + g_log * slope / px / (2.0 * a);
              wf = 2.0 * a * g_map;
              wp = g_log / px;
            } else {
              if (gin) gin->at(r, i) += g_map / px - g_log * slope / (2.0 * a * px * px);
              wf = -2.0 * a * g_map / px + g_log * slope / (px * px);
              wp = -g_log / px;
            }
            if (gnodes) {
              g.accumulate(b, u, wf, wp, gnodes->values().data() + i * (nb + 1), bin_weight.data() + i * nb);
            }
          }
        }
        if (gnodes) {
          for (std::size_t i = 0; i < width; ++i) {
            gs[i].finish(bin_weight.data() + i * nb, gnodes->values().data() + i * (nb + 1));
          }
        }
      });
}

}  // namespace

double piecewise_cdf(std::span<const double> nodes, double x) {
  const Grid g(nodes);
  const auto [b, u] = g.locate(x);
  return g.cdf(b, u);
}

double piecewise_density(std::span<const double> nodes, double x) {
  const Grid g(nodes);
  const auto [b, u] = g.locate(x);
  return g.density(b, u);
}

double piecewise_cdf_inverse(std::span<const double> nodes, double target) {
  const Grid g(nodes);
  const auto [b, u] = g.invert(target);
  return static_cast<double>(b) * g.h() + u;
}

NonlinearInvertible::NonlinearInvertible(const NonlinearConfig& config, const std::string& name)
    : FlowLayer(config.width), config_(config), raw_(name + ".raw", Tensor::matrix(config.width, config.bins + 1)) {
  if (!(config.cutoff > 0.0)) throw std::invalid_argument("nonlinear: cutoff must be positive");
  if (config.bins < 1) throw std::invalid_argument("nonlinear: need at least one bin");
  if (!(config.p_min > 0.0 && config.p_min < 1.0)) throw std::invalid_argument("nonlinear: p_min must lie in (0, 1)");
}

Var NonlinearInvertible::nodes(Tape& tape) const {
  const std::size_t nb = config_.bins;
  const double h = 1.0 / static_cast<double>(nb);
  Tensor trapz = Tensor::matrix(1, nb + 1, h);
  trapz[0] = trapz[nb] = 0.5 * h;
  // Row-wise max shift keeps exp in range; v / trapz(v) is unchanged by it.
  Tensor shift = Tensor::matrix(config_.width, 1);
  for (std::size_t i = 0; i < config_.width; ++i) {
    shift[i] = raw_.value.matrix().row(static_cast<Eigen::Index>(i)).maxCoeff();
  }
  const Var v = ops::exp(tape.param(raw_) - tape.constant(std::move(shift)));
  const Var total = sum_rows(v * tape.constant(std::move(trapz)));
  return add_scalar(mul_scalar(v / total, 1.0 - config_.p_min), config_.p_min);
}

Tensor NonlinearInvertible::node_density() const {
  Tape tape;
  return nodes(tape).value();
}

void NonlinearInvertible::set_node_density(const Tensor& density) {
  if (density.rows() != config_.width || density.cols() != config_.bins + 1) {
    throw std::invalid_argument("nonlinear: node density shape mismatch");
  }
  Tensor raw = Tensor::matrix(config_.width, config_.bins + 1);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!(density[i] > 0.0)) throw std::invalid_argument("nonlinear: node density must be positive");
    raw[i] = std::log(density[i]);
  }
  raw_.value = std::move(raw);
}

FlowResult NonlinearInvertible::forward_active(Tape& tape, const Var& y) const {
  const Var packed = record_map(tape, y, nodes(tape), config_.cutoff, false);
  return {slice_cols(packed, 0, width()), sum_rows(slice_cols(packed, width(), width()))};
}

FlowResult NonlinearInvertible::inverse_active(Tape& tape, const Var& z) const {
  const Var packed = record_map(tape, z, nodes(tape), config_.cutoff, true);
  return {slice_cols(packed, 0, width()), sum_rows(slice_cols(packed, width(), width()))};
}

}  // namespace vkr
