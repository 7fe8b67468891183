#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "vaekrnet/numerics/mlp.hpp"
#include "vaekrnet/numerics/ops.hpp"
#include "vaekrnet/numerics/rng.hpp"

namespace vkr {

/// Transformed rows plus the per-row log|det| of the map's Jacobian. The
/// log-det is either M x 1 or a 1 x 1 value shared by every row.
struct FlowResult {
  Var out;
  Var logdet;
};

/// Same as FlowResult with plain tensors; logdet is always M x 1.
struct FlowValues {
  Tensor out;
  Tensor logdet;
};

/// An invertible map acting on the first `width()` columns of its input.
/// Any trailing columns pass through untouched with zero log-det.
class FlowLayer {
 public:
  virtual ~FlowLayer() = default;

  virtual std::string kind() const = 0;
  virtual std::unique_ptr<FlowLayer> clone() const = 0;
  virtual ParameterList parameters() = 0;
  ConstParameterList parameters() const;

  std::size_t width() const { return width_; }

  FlowResult forward(Tape& tape, const Var& y) const;
  /// Inverse map; logdet is log|det dy/dz|.
  FlowResult inverse(Tape& tape, const Var& z) const;

  FlowValues forward(const Tensor& y) const;
  FlowValues inverse(const Tensor& z) const;

  /// Layers with data-dependent initialization report true until set up.
  virtual bool needs_init() const { return false; }
  virtual void initialize(const Tensor& /*active_batch*/) {}
  virtual void initialize_identity() {}

 protected:
  explicit FlowLayer(std::size_t width);
  FlowLayer(const FlowLayer&) = default;

  virtual FlowResult forward_active(Tape& tape, const Var& y) const = 0;
  virtual FlowResult inverse_active(Tape& tape, const Var& z) const = 0;

 private:
  FlowResult apply(Tape& tape, const Var& in, bool inverse) const;

  std::size_t width_;
};

using FlowLayerPtr = std::unique_ptr<FlowLayer>;

/// Prefix/suffix split that deactivates the trailing n - k components.
struct SqueezeMask {
  std::size_t n = 0;
  std::size_t k = 0;

  SqueezeMask(std::size_t n, std::size_t k);
};

std::pair<Tensor, Tensor> squeeze_split(const SqueezeMask& mask, const Tensor& y);
Tensor squeeze_join(const SqueezeMask& mask, const Tensor& active, const Tensor& frozen);
std::pair<Var, Var> squeeze_split(const SqueezeMask& mask, const Var& y);
Var squeeze_join(const Var& active, const Var& frozen);

/// z = W y with W = L U, L unit lower triangular, U upper triangular.
class RotationLU final : public FlowLayer {
 public:
  RotationLU(std::size_t k, const std::string& name = "rotation");

  std::string kind() const override { return "rotation"; }
  FlowLayerPtr clone() const override { return std::make_unique<RotationLU>(*this); }
  ParameterList parameters() override { return {&lower_, &upper_}; }

  /// Strictly lower entries are read from `lower`, upper and diagonal entries from `upper`.
  void set_factors(const Tensor& lower, const Tensor& upper);
  Tensor matrix() const;
  Parameter& lower() { return lower_; }
  Parameter& upper() { return upper_; }

 protected:
  FlowResult forward_active(Tape& tape, const Var& y) const override;
  FlowResult inverse_active(Tape& tape, const Var& z) const override;

 private:
  Var weight(Tape& tape, Var* logdet) const;

  Parameter lower_;
  Parameter upper_;
  Tensor lower_mask_;
  Tensor upper_mask_;
  Tensor eye_;
};

/// z = a * y + b per active component, with data-dependent initialization.
class ScaleBias final : public FlowLayer {
 public:
  ScaleBias(std::size_t k, const std::string& name = "scale_bias");

  std::string kind() const override { return "scale_bias"; }
  FlowLayerPtr clone() const override { return std::make_unique<ScaleBias>(*this); }
  ParameterList parameters() override { return {&scale_, &bias_}; }

  bool needs_init() const override { return !initialized_; }
  /// a = 1/std, b = -mean/std per column of an N x k batch (N >= 2).
  void initialize(const Tensor& active_batch) override;
  void initialize_identity() override;
  bool initialized() const { return initialized_; }
  void set(const Tensor& scale, const Tensor& bias);

  const Parameter& scale() const { return scale_; }
  const Parameter& bias() const { return bias_; }

 protected:
  FlowResult forward_active(Tape& tape, const Var& y) const override;
  FlowResult inverse_active(Tape& tape, const Var& z) const override;

 private:
  void require_init() const;

  Parameter scale_;
  Parameter bias_;
  bool initialized_ = false;
};

/// Inverse of a per-component affine map z = a * y + b given as tape values:
/// y = (z - b) / a with log|det dy/dz| = -sum log|a|. Shared by ScaleBias and
/// the mean-field Gaussian model.
FlowResult affine_inverse(const Var& z, const Var& scale, const Var& bias);

struct CouplingConfig {
  std::size_t width = 2;
  std::size_t hidden = 24;
  /// 0 conditions on the leading floor(k/2) components and updates the rest;
  /// 1 updates the leading ceil(k/2) components and conditions on the rest.
  int parity = 0;
  double alpha = 0.6;
};

/// z2 = y2 * (1 + alpha tanh s) + exp(beta) * tanh t with (s, t) = NN(y1).
class AffineCoupling final : public FlowLayer {
 public:
  AffineCoupling(const CouplingConfig& config, Rng& rng, const std::string& name = "coupling");

  std::string kind() const override { return "coupling"; }
  FlowLayerPtr clone() const override { return std::make_unique<AffineCoupling>(*this); }
  ParameterList parameters() override;

  const CouplingConfig& config() const { return config_; }
  std::size_t cond_size() const { return cond_size_; }
  std::size_t update_size() const { return width() - cond_size_; }
  Mlp& net() { return net_; }
  Parameter& beta() { return beta_; }

 protected:
  FlowResult forward_active(Tape& tape, const Var& y) const override;
  FlowResult inverse_active(Tape& tape, const Var& z) const override;

 private:
  struct Parts {
    Var cond;
    Var update;
  };
  Parts split(const Var& v) const;
  Var join(const Var& cond, const Var& update) const;
  /// Returns (1 + alpha tanh s, exp(beta) tanh t).
  std::pair<Var, Var> coefficients(Tape& tape, const Var& cond) const;

  CouplingConfig config_;
  std::size_t cond_size_;
  Mlp net_;
  Parameter beta_;
};

struct NonlinearConfig {
  std::size_t width = 1;
  double cutoff = 50.0;
  std::size_t bins = 32;
  double p_min = 1e-6;
};

/// Piecewise-quadratic CDF F on [0, 1] for node values p on a uniform grid.
double piecewise_cdf(std::span<const double> nodes, double x);
/// Density at x for node values p on a uniform grid.
double piecewise_density(std::span<const double> nodes, double x);
/// Solves F(x) = target; throws std::domain_error if the root leaves its bin.
double piecewise_cdf_inverse(std::span<const double> nodes, double target);

/// Component-wise y -> phi^-1(F(phi(y))) inside [-a, a], identity outside.
/// Node values per component are p = p_min + (1 - p_min) v / trapz(v) with
/// v = exp(r), so the density integrates to one and never drops below p_min.
class NonlinearInvertible final : public FlowLayer {
 public:
  NonlinearInvertible(const NonlinearConfig& config, const std::string& name = "nonlinear");

  std::string kind() const override { return "nonlinear"; }
  FlowLayerPtr clone() const override { return std::make_unique<NonlinearInvertible>(*this); }
  ParameterList parameters() override { return {&raw_}; }

  const NonlinearConfig& config() const { return config_; }
  /// Node values (width x (bins + 1)) currently implied by the raw parameters.
  Tensor node_density() const;
  /// Sets raw parameters so the node values approximate `density` (entries > 0).
  void set_node_density(const Tensor& density);

 protected:
  FlowResult forward_active(Tape& tape, const Var& y) const override;
  FlowResult inverse_active(Tape& tape, const Var& z) const override;

 private:
  Var nodes(Tape& tape) const;

  NonlinearConfig config_;
  Parameter raw_;
};

}  // namespace vkr
