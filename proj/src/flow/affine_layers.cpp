#include <cmath>
#include <stdexcept>

#include "vaekrnet/flow/layers.hpp"

namespace vkr {

using namespace ops;

// ---- RotationLU ----

RotationLU::RotationLU(std::size_t k, const std::string& name)
    : FlowLayer(k),
      lower_(name + ".lower", Tensor::matrix(k, k)),
      upper_(name + ".upper", Tensor::matrix(k, k)),
      lower_mask_(Tensor::matrix(k, k)),
      upper_mask_(Tensor::matrix(k, k)),
      eye_(Tensor::matrix(k, k)) {
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      lower_mask_.at(r, c) = c < r ? 1.0 : 0.0;
      upper_mask_.at(r, c) = c >= r ? 1.0 : 0.0;
    }
    eye_.at(r, r) = 1.0;
    upper_.value.at(r, r) = 1.0;
  }
}

void RotationLU::set_factors(const Tensor& lower, const Tensor& upper) {
  if (lower.rows() != width() || lower.cols() != width() || upper.rows() != width() ||
      upper.cols() != width()) {
    throw std::invalid_argument("rotation: factor shape mismatch");
  }
  lower_.value = Tensor::matrix(width(), width());
  upper_.value = Tensor::matrix(width(), width());
  lower_.value.matrix() = lower.matrix();
  upper_.value.matrix() = upper.matrix();
}

Tensor RotationLU::matrix() const {
  Tape tape;
  return weight(tape, nullptr).value();
}

Var RotationLU::weight(Tape& tape, Var* logdet) const {
  for (std::size_t i = 0; i < width(); ++i) {
    if (std::abs(upper_.value.at(i, i)) < 1e-12) {
      throw std::domain_error("rotation: singular factor, |U_" + std::to_string(i) + std::to_string(i) +
                              "| < 1e-12");
    }
  }
  const Var l = tape.param(lower_) * tape.constant(lower_mask_) + tape.constant(eye_);
  const Var u = tape.param(upper_) * tape.constant(upper_mask_);
  if (logdet) *logdet = sum(log_abs(diagonal(u)));
  return matmul(l, u);
}

FlowResult RotationLU::forward_active(Tape& tape, const Var& y) const {
  Var logdet;
  const Var w = weight(tape, &logdet);
  return {matmul(y, transpose(w)), logdet};
}

FlowResult RotationLU::inverse_active(Tape& tape, const Var& z) const {
  Var logdet;
  const Var w = weight(tape, &logdet);
  return {matmul(z, transpose(ops::inverse(w))), neg(logdet)};
}

// ---- ScaleBias ----

ScaleBias::ScaleBias(std::size_t k, const std::string& name)
    : FlowLayer(k),
      scale_(name + ".scale", Tensor::matrix(1, k, 1.0)),
      bias_(name + ".bias", Tensor::matrix(1, k, 0.0)) {}

void ScaleBias::initialize(const Tensor& batch) {
  if (batch.cols() != width()) throw std::invalid_argument("scale_bias init: batch width mismatch");
  const std::size_t n = batch.rows();
  if (n < 2) throw std::invalid_argument("scale_bias init: need at least 2 samples");
  batch.check_finite("scale_bias init batch");
  const auto m = batch.matrix();
  for (std::size_t c = 0; c < width(); ++c) {
    const auto col = m.col(static_cast<Eigen::Index>(c));
    const double mean = col.mean();
    const double var = (col.array() - mean).square().sum() / static_cast<double>(n);
    const double std = std::sqrt(var);
    if (!(std > 1e-12 * std::max(1.0, std::abs(mean)))) {
      throw std::invalid_argument("scale_bias init: zero standard deviation in dimension " +
                                  std::to_string(c));
    }
    scale_.value[c] = 1.0 / std;
    bias_.value[c] = -mean / std;
  }
  initialized_ = true;
}

void ScaleBias::initialize_identity() {
  scale_.value = Tensor::matrix(1, width(), 1.0);
  bias_.value = Tensor::matrix(1, width(), 0.0);
  initialized_ = true;
}

void ScaleBias::set(const Tensor& scale, const Tensor& bias) {
  if (scale.size() != width() || bias.size() != width()) {
    throw std::invalid_argument("scale_bias: parameter size mismatch");
  }
  for (std::size_t i = 0; i < width(); ++i) {
    scale_.value[i] = scale[i];
    bias_.value[i] = bias[i];
  }
  initialized_ = true;
}

void ScaleBias::require_init() const {
  if (!initialized_) throw std::logic_error("scale_bias: layer used before initialization");
}

FlowResult ScaleBias::forward_active(Tape& tape, const Var& y) const {
  require_init();
  const Var a = tape.param(scale_);
  return {y * a + tape.param(bias_), sum(log_abs(a))};
}

FlowResult ScaleBias::inverse_active(Tape& tape, const Var& z) const {
  require_init();
  return affine_inverse(z, tape.param(scale_), tape.param(bias_));
}

FlowResult affine_inverse(const Var& z, const Var& scale, const Var& bias) {
  return {(z - bias) / scale, neg(sum(log_abs(scale)))};
}

// ---- AffineCoupling ----

namespace {
std::size_t checked_cond_size(const CouplingConfig& c) {
  if (c.width == 0) throw std::invalid_argument("coupling: width must be positive");
  if (c.parity != 0 && c.parity != 1) throw std::invalid_argument("coupling: parity must be 0 or 1");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw std::invalid_argument("coupling: alpha must lie in (0, 1)");
  return c.width / 2;
}
}  // namespace

AffineCoupling::AffineCoupling(const CouplingConfig& config, Rng& rng, const std::string& name)
    : FlowLayer(config.width),
      config_(config),
      cond_size_(checked_cond_size(config)),
      net_({cond_size_, config.hidden, config.hidden, 2 * (config.width - cond_size_)}, rng, true,
           name + ".net"),
      beta_(name + ".beta", Tensor::matrix(1, config.width - cond_size_, 0.0)) {}

ParameterList AffineCoupling::parameters() {
  ParameterList out = net_.parameters();
  out.push_back(&beta_);
  return out;
}

AffineCoupling::Parts AffineCoupling::split(const Var& v) const {
  const std::size_t upd = update_size();
  if (config_.parity == 0) return {slice_cols(v, 0, cond_size_), slice_cols(v, cond_size_, upd)};
  return {slice_cols(v, upd, cond_size_), slice_cols(v, 0, upd)};
}

Var AffineCoupling::join(const Var& cond, const Var& update) const {
  if (cond_size_ == 0) return update;
  return config_.parity == 0 ? concat_cols({cond, update}) : concat_cols({update, cond});
}

std::pair<Var, Var> AffineCoupling::coefficients(Tape& tape, const Var& cond) const {
  const std::size_t upd = update_size();
  const Var st = net_.forward(tape, cond);
  if (st.cols() != 2 * upd) throw std::invalid_argument("coupling: network output width mismatch");
  const Var scale = add_scalar(mul_scalar(ops::tanh(slice_cols(st, 0, upd)), config_.alpha), 1.0);
  const Var shift = ops::exp(tape.param(beta_)) * ops::tanh(slice_cols(st, upd, upd));
  return {scale, shift};
}

FlowResult AffineCoupling::forward_active(Tape& tape, const Var& y) const {
  const Parts p = split(y);
  const auto [scale, shift] = coefficients(tape, p.cond);
  return {join(p.cond, p.update * scale + shift), sum_rows(ops::log(scale))};
}

FlowResult AffineCoupling::inverse_active(Tape& tape, const Var& z) const {
  const Parts p = split(z);
  const auto [scale, shift] = coefficients(tape, p.cond);
  return {join(p.cond, (p.update - shift) / scale), neg(sum_rows(ops::log(scale)))};
}

}  // namespace vkr
