#include "vaekrnet/vb/vb.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "vaekrnet/numerics/gaussian.hpp"

namespace vkr {

using namespace ops;

// ---- TargetDensity ----

Var TargetDensity::evaluate(Tape& tape, const Var& y) const {
  if (!log_density) throw std::invalid_argument("target density: no evaluator");
  if (y.cols() != dim) throw std::invalid_argument("target density: dimension mismatch");
  const Var out = log_density(tape, y);
  if (out.rows() != y.rows() || out.cols() != 1) {
    throw std::invalid_argument("target density: evaluator must return one value per row");
  }
  const Tensor& v = out.value();
  for (std::size_t r = 0; r < v.rows(); ++r) {
    if (std::isnan(v[r]) || v[r] == -INFINITY || v[r] == INFINITY) {
      std::ostringstream msg;
      msg << "target density is " << v[r] << " at sampled point " << r << " (";
      for (std::size_t c = 0; c < dim; ++c) msg << (c ? ", " : "") << y.value().at(r, c);
      msg << ")";
      throw NonFiniteError(msg.str());
    }
  }
  return out;
}

TargetDensity TargetDensity::shifted(double shift) const {
  TargetDensity out = *this;
  auto base = log_density;
  out.log_density = [base, shift](Tape& tape, const Var& y) { return add_scalar(base(tape, y), shift); };
  if (neg_log_norm) out.neg_log_norm = *neg_log_norm - shift;
  return out;
}

// ---- Lambda ----

Lambda::Lambda(double value) {
  if (std::isnan(value)) throw std::invalid_argument("lambda must be a number");
  if (std::isinf(value) && value > 0) return;
  if (!(value > 1.0)) {
    throw std::invalid_argument("lambda must exceed 1 (lambda <= 1 makes the loss unbounded below)");
  }
  infinite_ = false;
  value_ = value;
}

Lambda Lambda::parse(std::string_view text) {
  if (text == "inf" || text == "infinity" || text == "Inf" || text == "INF") return infinite();
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw std::invalid_argument("lambda: cannot parse '" + std::string(text) + "'");
  }
  return Lambda(v);
}

double Lambda::value() const { return infinite_ ? INFINITY : value_; }

std::string Lambda::str() const {
  if (infinite_) return "inf";
  std::ostringstream out;
  out.precision(17);
  out << value_;
  return out.str();
}

// ---- MeanFieldModel ----

MeanFieldModel::MeanFieldModel(std::size_t dim, const std::string& name)
    : mean_(name + ".mean", Tensor::matrix(1, dim, 0.0)), log_std_(name + ".log_std", Tensor::matrix(1, dim, 0.0)) {
  if (dim == 0) throw std::invalid_argument("mean-field model: dimension must be positive");
}

void MeanFieldModel::set(const Tensor& mean, const Tensor& std) {
  if (mean.size() != dim() || std.size() != dim()) throw std::invalid_argument("mean-field model: size mismatch");
  for (std::size_t i = 0; i < dim(); ++i) {
    if (!(std[i] > 0.0)) throw std::invalid_argument("mean-field model: std must be positive");
    mean_.value[i] = mean[i];
    log_std_.value[i] = std::log(std[i]);
  }
}

std::pair<Var, Var> MeanFieldModel::affine(Tape& tape) const {
  const Var a = ops::exp(neg(tape.param(log_std_)));
  const Var b = neg(tape.param(mean_) * a);
  return {a, b};
}

FlowResult MeanFieldModel::inverse(Tape& tape, const Var& z) const {
  if (z.cols() != dim()) throw std::invalid_argument("mean-field model: dimension mismatch");
  const auto [a, b] = affine(tape);
  return affine_inverse(z, a, b);
}

Tensor MeanFieldModel::scale() const {
  Tape tape;
  return affine(tape).first.value();
}

Tensor MeanFieldModel::bias() const {
  Tape tape;
  return affine(tape).second.value();
}

Tensor MeanFieldModel::sample(std::size_t count, Rng& rng) const {
  Tape tape;
  return inverse(tape, tape.constant(gauss_sample(rng, {count, dim()}))).out.value();
}

Tensor MeanFieldModel::log_pdf(const Tensor& y) const {
  Tape tape;
  return diag_gauss_log_pdf(tape.constant(y), tape.param(mean_), tape.param(log_std_)).value();
}

void MeanFieldModel::save(Manifest& manifest) const {
  manifest.set("dim", dim());
  manifest.add_parameters(parameters());
}

void MeanFieldModel::load(const Manifest& manifest, std::size_t& cursor) {
  manifest.load_parameters(parameters(), cursor);
}

// ---- losses ----

namespace {

template <class Flow>
Var flow_rows(Tape& tape, const Flow& model, const TargetDensity& target, const Tensor& z) {
  if (z.cols() != target.dim) throw std::invalid_argument("variational loss: model and target dimensions differ");
  const Var zv = tape.constant(z);
  const FlowResult r = model.inverse(tape, zv);
  return std_normal_log_pdf(zv) - r.logdet - target.evaluate(tape, r.out);
}

void require_batch(std::size_t M) {
  if (M < 1) throw std::invalid_argument("variational loss: M must be at least 1");
}

}  // namespace

Var krnet_vb_rows(Tape& tape, const KRnet& model, const TargetDensity& target, const Tensor& z) {
  return flow_rows(tape, model, target, z);
}

Var krnet_vb_rows(Tape& tape, const MeanFieldModel& model, const TargetDensity& target, const Tensor& z) {
  return flow_rows(tape, model, target, z);
}

Var krnet_vb_rows(Tape& tape, const FlowLayer& model, const TargetDensity& target, const Tensor& z) {
  return flow_rows(tape, model, target, z);
}

Var krnet_vb_loss(Tape& tape, const KRnet& model, const TargetDensity& target, std::size_t M, Rng& rng) {
  require_batch(M);
  return mean(krnet_vb_rows(tape, model, target, gauss_sample(rng, {M, target.dim})));
}

Var krnet_vb_loss(Tape& tape, const MeanFieldModel& model, const TargetDensity& target, std::size_t M,
                  Rng& rng) {
  require_batch(M);
  return mean(krnet_vb_rows(tape, model, target, gauss_sample(rng, {M, target.dim})));
}

VbTerms vae_krnet_vb_terms(Tape& tape, const VaeKrnet& model, const TargetDensity& target, const Tensor& xi,
                           const Tensor& eta) {
  if (target.dim != model.data_dim()) {
    throw std::invalid_argument("variational loss: model and target dimensions differ");
  }
  if (eta.rows() != xi.rows() || eta.cols() != model.data_dim()) {
    throw std::invalid_argument("variational loss: noise shape mismatch");
  }
  const LatentDraw prior = model.prior_sample(tape, xi);
  const GaussHead::Output dec = model.vae().decoder.forward(tape, prior.x);
  const Var noise = tape.constant(eta);
  const Var y = dec.mean + ops::exp(dec.log_std) * noise;
  const Var log_lik = std_normal_log_pdf(noise) - sum_rows(dec.log_std);
  VbTerms t;
  t.y = y;
  t.log_px = prior.log_q;
  t.fit = log_lik + t.log_px - target.evaluate(tape, y);
  t.log_q = model.encoder_cond_log_pdf(tape, prior.x, y);
  return t;
}

Var combine_vb_terms(const VbTerms& t, const Lambda& lambda) {
  if (lambda.is_infinite()) return t.fit - t.log_q;
  const double l = lambda.value();
  return mul_scalar(t.fit, l - 1.0) + t.log_px - mul_scalar(t.log_q, l);
}

Var vae_krnet_vb_loss(Tape& tape, const VaeKrnet& model, const TargetDensity& target, const Lambda& lambda,
                      std::size_t M, Rng& rng) {
  require_batch(M);
  const Tensor xi = gauss_sample(rng, {M, model.latent_dim()});
  const Tensor eta = gauss_sample(rng, {M, model.data_dim()});
  return mean(combine_vb_terms(vae_krnet_vb_terms(tape, model, target, xi, eta), lambda));
}

}  // namespace vkr
