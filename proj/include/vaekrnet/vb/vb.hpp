#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "vaekrnet/krnet/krnet.hpp"
#include "vaekrnet/vae/vae_krnet.hpp"

namespace vkr {

/// Unnormalized log-density log p_hat(y) on R^n. `log_density` maps an
/// M x n Var to M x 1 rows and must be differentiable in y.
struct TargetDensity {
  std::size_t dim = 0;
  std::function<Var(Tape&, const Var&)> log_density;
  /// -log C with p_hat = C p when known.
  std::optional<double> neg_log_norm;

  /// Evaluates the rows; throws NonFiniteError naming the first row that is
  /// NaN or -inf, together with its coordinates.
  Var evaluate(Tape& tape, const Var& y) const;
  /// Same target multiplied by the constant e^shift.
  TargetDensity shifted(double shift) const;
};

/// Mutual-information weight: either infinite or a finite value > 1.
class Lambda {
 public:
  static Lambda infinite() { return Lambda(); }
  /// Throws std::invalid_argument for values <= 1 or NaN; +inf gives infinite().
  explicit Lambda(double value);
  /// Accepts "inf", "infinity" or a number.
  static Lambda parse(std::string_view text);

  bool is_infinite() const { return infinite_; }
  /// +inf when infinite.
  double value() const;
  std::string str() const;

 private:
  Lambda() = default;
  bool infinite_ = true;
  double value_ = 0.0;
};

/// Independent Gaussian per coordinate: y = mean + std * z.
class MeanFieldModel {
 public:
  explicit MeanFieldModel(std::size_t dim, const std::string& name = "meanfield");

  std::size_t dim() const { return mean_.value.size(); }
  const Parameter& mean() const { return mean_; }
  const Parameter& log_std() const { return log_std_; }
  void set(const Tensor& mean, const Tensor& std);

  /// The model as the inverse of a scale-bias layer with
  /// scale = exp(-log_std) and bias = -mean * scale.
  FlowResult inverse(Tape& tape, const Var& z) const;
  /// scale and bias of that layer, computed exactly as `inverse` does.
  Tensor scale() const;
  Tensor bias() const;

  Tensor sample(std::size_t count, Rng& rng) const;
  Tensor log_pdf(const Tensor& y) const;

  ParameterList parameters() { return {&mean_, &log_std_}; }
  ConstParameterList parameters() const { return {&mean_, &log_std_}; }

  void save(Manifest& manifest) const;
  void load(const Manifest& manifest, std::size_t& cursor);

 private:
  std::pair<Var, Var> affine(Tape& tape) const;

  Parameter mean_;
  Parameter log_std_;
};

/// Row terms of the shifted KL for a flow sampled through its inverse:
/// log q(y) - log p_hat(y) at y = f^-1(z).
Var krnet_vb_rows(Tape& tape, const KRnet& model, const TargetDensity& target, const Tensor& z);
Var krnet_vb_rows(Tape& tape, const MeanFieldModel& model, const TargetDensity& target, const Tensor& z);
/// A single flow layer acting on all n columns.
Var krnet_vb_rows(Tape& tape, const FlowLayer& model, const TargetDensity& target, const Tensor& z);
/// Mean over M fresh draws z ~ N(0, I).
Var krnet_vb_loss(Tape& tape, const KRnet& model, const TargetDensity& target, std::size_t M, Rng& rng);
Var krnet_vb_loss(Tape& tape, const MeanFieldModel& model, const TargetDensity& target, std::size_t M,
                  Rng& rng);

/// Per-row pieces of the VAE-KRnet variational loss at
/// x = f_pr^-1(xi), y = mu_de(x) + sigma_de(x) * eta.
struct VbTerms {
  Var y;
  /// log p(y|x) + log p_X(x) - log p_hat(y)
  Var fit;
  /// log p_X(x)
  Var log_px;
  /// log q(x|y)
  Var log_q;
};

VbTerms vae_krnet_vb_terms(Tape& tape, const VaeKrnet& model, const TargetDensity& target, const Tensor& xi,
                           const Tensor& eta);
/// fit - log_q when lambda is infinite, else
/// (lambda - 1) fit + log_px - lambda log_q.
Var combine_vb_terms(const VbTerms& terms, const Lambda& lambda);
/// Mean of the combined rows over M draws of (xi, eta).
Var vae_krnet_vb_loss(Tape& tape, const VaeKrnet& model, const TargetDensity& target, const Lambda& lambda,
                      std::size_t M, Rng& rng);

}  // namespace vkr
