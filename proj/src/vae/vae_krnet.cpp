#include "vaekrnet/vae/vae_krnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "vaekrnet/numerics/gaussian.hpp"

namespace vkr {

using namespace ops;

namespace {

constexpr std::size_t kChunkRows = 8192;

std::optional<KRnet> make_flow(const VaeKrnetConfig& c, bool enabled, std::size_t depth, Rng& rng,
                               const std::string& name) {
  if (!enabled) return std::nullopt;
  const std::size_t d = c.vae.latent_dim;
  KRnetConfig kc = make_krnet_config(d, std::min(d, std::max<std::size_t>(c.blocks, 1)), depth, c.flow_hidden);
  kc.rotation = c.flow_rotation;
  return KRnet(kc, rng, name);
}

Tensor repeat_row(std::span<const double> y, std::size_t count) {
  Tensor out = Tensor::matrix(count, y.size());
  for (std::size_t r = 0; r < count; ++r) std::copy(y.begin(), y.end(), out.values().begin() + r * y.size());
  return out;
}

}  // namespace

double log_mean_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("log_mean_exp: no values");
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isnan(v)) throw NonFiniteError("log_mean_exp: NaN term");
    hi = std::max(hi, v);
  }
  if (!std::isfinite(hi)) {
    if (hi < 0) throw NonFiniteError("log_mean_exp: every term is -inf");
    throw NonFiniteError("log_mean_exp: +inf term");
  }
  double total = 0.0;
  for (double v : values) total += std::exp(v - hi);
  return hi + std::log(total / static_cast<double>(values.size()));
}

VaeKrnet::VaeKrnet(const VaeKrnetConfig& config, Rng& rng)
    : config_(config),
      vae_(config.vae, rng),
      prior_(make_flow(config, config.prior_flow, config.prior_depth, rng, "prior")),
      encoder_(make_flow(config, config.encoder_flow, config.encoder_depth, rng, "encflow")) {}

Var VaeKrnet::prior_log_pdf(Tape& tape, const Var& x) const {
  if (!prior_) return std_normal_log_pdf(x);
  return prior_->log_pdf(tape, x);
}

LatentDraw VaeKrnet::prior_sample(Tape& tape, const Tensor& xi) const {
  const Var noise = tape.constant(xi);
  if (!prior_) return {noise, std_normal_log_pdf(noise)};
  const FlowResult r = prior_->inverse(tape, noise);
  return {r.out, std_normal_log_pdf(noise) - r.logdet};
}

LatentDraw VaeKrnet::encoder_sample(Tape& tape, const Var& y, const Tensor& xi) const {
  if (xi.rows() != y.rows() || xi.cols() != latent_dim()) {
    throw std::invalid_argument("encoder_sample: noise shape mismatch");
  }
  const GaussHead::Output enc = vae_.encoder.forward(tape, y);
  const Var noise = tape.constant(xi);
  Var u = noise;
  Var logdet_inv = tape.constant(Tensor::matrix(xi.rows(), 1));
  if (encoder_) {
    const FlowResult r = encoder_->inverse(tape, noise);
    u = r.out;
    logdet_inv = logdet_inv + r.logdet;
  }
  const Var x = enc.mean + ops::exp(enc.log_std) * u;
  const Var log_q = std_normal_log_pdf(noise) - logdet_inv - sum_rows(enc.log_std);
  return {x, log_q};
}

Var VaeKrnet::standardized(Tape&, const Var& x, const GaussHead::Output& enc) const {
  return (x - enc.mean) / ops::exp(enc.log_std);
}

Var VaeKrnet::encoder_cond_log_pdf(Tape& tape, const Var& x, const Var& y) const {
  const GaussHead::Output enc = vae_.encoder.forward(tape, y);
  const Var u = standardized(tape, x, enc);
  if (!encoder_) return std_normal_log_pdf(u) - sum_rows(enc.log_std);
  return encoder_->log_pdf(tape, u) - sum_rows(enc.log_std);
}

Var VaeKrnet::decoder_log_pdf(Tape& tape, const Var& y, const Var& x) const {
  const GaussHead::Output dec = vae_.decoder.forward(tape, x);
  return diag_gauss_log_pdf(y, dec.mean, dec.log_std);
}

Var VaeKrnet::elbo(Tape& tape, const Var& y, const Tensor& xi) const {
  const LatentDraw draw = encoder_sample(tape, y, xi);
  return decoder_log_pdf(tape, y, draw.x) + prior_log_pdf(tape, draw.x) - draw.log_q;
}

double VaeKrnet::marginal_log_pdf_prior_mc(std::span<const double> y, std::size_t N, Rng& rng) const {
  if (N < 1) throw std::invalid_argument("marginal estimate: N must be positive");
  if (y.size() != data_dim()) throw std::invalid_argument("marginal estimate: data dimension mismatch");
  std::vector<double> terms;
  terms.reserve(N);
  for (std::size_t start = 0; start < N; start += kChunkRows) {
    const std::size_t count = std::min(kChunkRows, N - start);
    const Tensor xi = gauss_sample(rng, {count, latent_dim()});
    Tape tape;
    const LatentDraw draw = prior_sample(tape, xi);
    const Tensor lp = decoder_log_pdf(tape, tape.constant(repeat_row(y, count)), draw.x).value();
    terms.insert(terms.end(), lp.values().begin(), lp.values().end());
  }
  return log_mean_exp(terms);
}

double VaeKrnet::marginal_log_pdf_importance(std::span<const double> y, std::size_t N, Rng& rng) const {
  if (N < 1) throw std::invalid_argument("marginal estimate: N must be positive");
  if (y.size() != data_dim()) throw std::invalid_argument("marginal estimate: data dimension mismatch");
  std::vector<double> terms;
  terms.reserve(N);
  for (std::size_t start = 0; start < N; start += kChunkRows) {
    const std::size_t count = std::min(kChunkRows, N - start);
    const Tensor xi = gauss_sample(rng, {count, latent_dim()});
    Tape tape;
    const Var yv = tape.constant(repeat_row(y, count));
    const LatentDraw draw = encoder_sample(tape, yv, xi);
    const Tensor lw = (decoder_log_pdf(tape, yv, draw.x) + prior_log_pdf(tape, draw.x) - draw.log_q).value();
    for (double v : lw.values()) {
      if (std::isnan(v)) throw NonFiniteError("importance estimate: encoder density vanished at a draw");
    }
    terms.insert(terms.end(), lw.values().begin(), lw.values().end());
  }
  return log_mean_exp(terms);
}

Tensor VaeKrnet::sample(std::size_t count, Rng& rng) const {
  Tensor out = Tensor::matrix(count, data_dim());
  for (std::size_t start = 0; start < count; start += kChunkRows) {
    const std::size_t m = std::min(kChunkRows, count - start);
    const Tensor xi = gauss_sample(rng, {m, latent_dim()});
    const Tensor eta = gauss_sample(rng, {m, data_dim()});
    Tape tape;
    const LatentDraw draw = prior_sample(tape, xi);
    const GaussHead::Output dec = vae_.decoder.forward(tape, draw.x);
    const Var y = dec.mean + ops::exp(dec.log_std) * tape.constant(eta);
    out.matrix().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(m)) = y.value().matrix();
  }
  return out;
}

void VaeKrnet::initialize_for_data(const Tensor& y_batch, Rng& rng) {
  if (encoder_) encoder_->initialize_identity();
  if (prior_ && !prior_->initialized()) {
    const Tensor xi = gauss_sample(rng, {y_batch.rows(), latent_dim()});
    Tape tape;
    const LatentDraw draw = encoder_sample(tape, tape.constant(y_batch), xi);
    prior_->initialize(draw.x.value());
  }
}

void VaeKrnet::initialize_for_target(std::size_t batch, Rng& rng) {
  if (prior_) prior_->initialize_identity();
  if (encoder_ && !encoder_->initialized()) {
    const Tensor xi = gauss_sample(rng, {batch, latent_dim()});
    const Tensor eta = gauss_sample(rng, {batch, data_dim()});
    Tape tape;
    const LatentDraw draw = prior_sample(tape, xi);
    const GaussHead::Output dec = vae_.decoder.forward(tape, draw.x);
    const Var y = dec.mean + ops::exp(dec.log_std) * tape.constant(eta);
    const GaussHead::Output enc = vae_.encoder.forward(tape, y);
    encoder_->initialize(standardized(tape, draw.x, enc).value());
  }
}

bool VaeKrnet::initialized() const {
  return (!prior_ || prior_->initialized()) && (!encoder_ || encoder_->initialized());
}

ParameterList VaeKrnet::parameters() {
  ParameterList out = vae_.parameters();
  if (prior_) {
    for (Parameter* p : prior_->parameters()) out.push_back(p);
  }
  if (encoder_) {
    for (Parameter* p : encoder_->parameters()) out.push_back(p);
  }
  return out;
}

ConstParameterList VaeKrnet::parameters() const {
  ConstParameterList out = vae_.parameters();
  if (prior_) {
    for (const Parameter* p : std::as_const(*prior_).parameters()) out.push_back(p);
  }
  if (encoder_) {
    for (const Parameter* p : std::as_const(*encoder_).parameters()) out.push_back(p);
  }
  return out;
}

void VaeKrnet::save(Manifest& m) const {
  m.set("data_dim", config_.vae.data_dim);
  m.set("latent_dim", config_.vae.latent_dim);
  m.set("depth", config_.vae.depth);
  m.set("width", config_.vae.width);
  m.set("blocks", config_.blocks);
  m.set("prior_depth", config_.prior_depth);
  m.set("encoder_depth", config_.encoder_depth);
  m.set("flow_hidden", config_.flow_hidden);
  m.set("prior_flow", config_.prior_flow);
  m.set("encoder_flow", config_.encoder_flow);
  m.set("flow_rotation", config_.flow_rotation);
  m.add_parameters(vae_.parameters());
  if (prior_) prior_->save(m, "prior.");
  if (encoder_) encoder_->save(m, "encflow.");
}

VaeKrnetConfig VaeKrnet::config_from(const Manifest& m) {
  VaeKrnetConfig c;
  c.vae.data_dim = m.get_size("data_dim");
  c.vae.latent_dim = m.get_size("latent_dim");
  c.vae.depth = m.get_size("depth");
  c.vae.width = m.get_size("width");
  c.blocks = m.get_size("blocks");
  c.prior_depth = m.get_size("prior_depth");
  c.encoder_depth = m.get_size("encoder_depth");
  c.flow_hidden = m.get_size("flow_hidden");
  c.prior_flow = m.get_bool("prior_flow");
  c.encoder_flow = m.get_bool("encoder_flow");
  c.flow_rotation = m.get_bool("flow_rotation");
  return c;
}

void VaeKrnet::load(const Manifest& m, std::size_t& cursor) {
  m.load_parameters(vae_.parameters(), cursor);
  if (prior_) prior_->load(m, cursor, "prior.");
  if (encoder_) encoder_->load(m, cursor, "encflow.");
}

}  // namespace vkr
