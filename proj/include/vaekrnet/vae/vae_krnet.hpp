#pragma once

#include <optional>

#include "vaekrnet/krnet/krnet.hpp"
#include "vaekrnet/vae/vae.hpp"

namespace vkr {

struct VaeKrnetConfig {
  VaeConfig vae;
  /// Flow block count; latent flows use min(d, blocks).
  std::size_t blocks = 2;
  std::size_t prior_depth = 4;    // L_pr
  std::size_t encoder_depth = 2;  // L_en
  std::size_t flow_hidden = 32;   // N_L
  bool prior_flow = true;
  bool encoder_flow = true;
  /// Rotation layers in both latent flows.
  bool flow_rotation = false;
};

/// Latent draw from the encoder with its log-density.
struct LatentDraw {
  Var x;
  Var log_q;
};

/// VAE whose prior is p_G(f_pr(x)) |grad f_pr| and whose encoder is
/// x = mu(y) + sigma(y) * f_en^-1(xi). Either flow may be absent, which gives
/// back the canonical VAE.
class VaeKrnet {
 public:
  VaeKrnet(const VaeKrnetConfig& config, Rng& rng);

  const VaeKrnetConfig& config() const { return config_; }
  std::size_t data_dim() const { return config_.vae.data_dim; }
  std::size_t latent_dim() const { return config_.vae.latent_dim; }
  Vae& vae() { return vae_; }
  const Vae& vae() const { return vae_; }
  KRnet* prior_flow() { return prior_ ? &*prior_ : nullptr; }
  const KRnet* prior_flow() const { return prior_ ? &*prior_ : nullptr; }
  KRnet* encoder_flow() { return encoder_ ? &*encoder_ : nullptr; }
  const KRnet* encoder_flow() const { return encoder_ ? &*encoder_ : nullptr; }

  /// Row-wise log p_X(x).
  Var prior_log_pdf(Tape& tape, const Var& x) const;
  /// x = f_pr^-1(xi) together with log p_X(x).
  LatentDraw prior_sample(Tape& tape, const Tensor& xi) const;
  /// Reparameterized encoder draw for noise xi (M x d) at data rows y.
  LatentDraw encoder_sample(Tape& tape, const Var& y, const Tensor& xi) const;
  /// Row-wise log q(x|y) through the full change of variables.
  Var encoder_cond_log_pdf(Tape& tape, const Var& x, const Var& y) const;
  /// Row-wise log p(y|x).
  Var decoder_log_pdf(Tape& tape, const Var& y, const Var& x) const;
  /// Row-wise single-sample lower bound with encoder noise xi.
  Var elbo(Tape& tape, const Var& y, const Tensor& xi) const;

  /// log (1/N) sum p(y|x_i), x_i = f_pr^-1(xi_i).
  double marginal_log_pdf_prior_mc(std::span<const double> y, std::size_t N, Rng& rng) const;
  /// log (1/N) sum p(y|x_i) p_X(x_i) / q(x_i|y), x_i from the encoder.
  double marginal_log_pdf_importance(std::span<const double> y, std::size_t N, Rng& rng) const;

  /// Data-space samples: x from the prior, y = mu_de(x) + sigma_de(x) * eta.
  Tensor sample(std::size_t count, Rng& rng) const;

  /// Prepares scale-bias layers for training on data: the encoder flow starts
  /// at the identity (it is first used in the inverse direction) and the
  /// prior flow is standardized on encoder draws for the batch.
  void initialize_for_data(const Tensor& y_batch, Rng& rng);
  /// Prepares scale-bias layers for posterior fitting: the prior flow starts
  /// at the identity (it is sampled through its inverse) and the encoder
  /// flow is standardized on its first forward inputs.
  void initialize_for_target(std::size_t batch, Rng& rng);
  bool initialized() const;

  ParameterList parameters();
  ConstParameterList parameters() const;

  void save(Manifest& manifest) const;
  static VaeKrnetConfig config_from(const Manifest& manifest);
  void load(const Manifest& manifest, std::size_t& cursor);

 private:
  Var standardized(Tape& tape, const Var& x, const GaussHead::Output& enc) const;

  VaeKrnetConfig config_;
  Vae vae_;
  std::optional<KRnet> prior_;
  std::optional<KRnet> encoder_;
};

/// Numerically stable log (1/N) sum exp(v_i); throws if every term is -inf.
double log_mean_exp(std::span<const double> values);

}  // namespace vkr
