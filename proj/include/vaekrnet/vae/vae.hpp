#pragma once

#include <string>
#include <utility>

#include <Eigen/Core>

#include "vaekrnet/io/manifest.hpp"
#include "vaekrnet/numerics/mlp.hpp"
#include "vaekrnet/numerics/ops.hpp"

namespace vkr {

inline constexpr double kLogStdClamp = 7.0;

/// Diagonal Gaussian conditional: one tanh MLP whose output splits into a
/// mean and a log-std clamped to [-7, 7].
class GaussHead {
 public:
  struct Output {
    Var mean;
    Var log_std;
  };

  GaussHead() = default;
  /// `depth` hidden layers of `width` units.
  GaussHead(std::size_t in, std::size_t out, std::size_t depth, std::size_t width, Rng& rng,
            const std::string& name);

  Output forward(Tape& tape, const Var& input) const;

  std::size_t in_dim() const { return net_.input_width(); }
  std::size_t out_dim() const { return net_.output_width() / 2; }
  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  ParameterList parameters() { return net_.parameters(); }
  ConstParameterList parameters() const { return net_.parameters(); }

 private:
  Mlp net_;
};

/// log N(x; mean, diag(std^2)) for one point. Throws if any std <= 0.
double diag_gauss_log_pdf(std::span<const double> mean, std::span<const double> std, std::span<const double> x);

struct VaeConfig {
  std::size_t data_dim = 1;    // n
  std::size_t latent_dim = 1;  // d
  std::size_t depth = 2;       // D
  std::size_t width = 32;      // N_D
};

/// Canonical VAE: Gaussian encoder q(x|y), Gaussian decoder p(y|x), prior N(0, I).
struct Vae {
  VaeConfig config;
  GaussHead encoder;
  GaussHead decoder;

  Vae() = default;
  Vae(const VaeConfig& config, Rng& rng);

  ParameterList parameters();
  ConstParameterList parameters() const;
};

/// Row-wise single-sample ELBO with encoder noise `xi` (M x d):
/// log p(y|x) + log p_G(x) - log q(x|y) at x = mu + sigma * xi.
Var elbo_canonical_rows(Tape& tape, const Vae& vae, const Var& y, const Tensor& xi);
/// Row-wise ELBO averaged over J reparameterized draws per row.
Var elbo_canonical(Tape& tape, const Vae& vae, const Var& y, std::size_t J, Rng& rng);

/// Gaussian posterior of x for y = A x + sigma * noise, x ~ N(0, prior_cov):
/// cov = (prior_cov^-1 + A^T A / sigma^2)^-1, mean = cov A^T y / sigma^2.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> linear_gauss_posterior(const Eigen::MatrixXd& A, double sigma,
                                                                   const Eigen::MatrixXd& prior_cov,
                                                                   const Eigen::VectorXd& y);
/// log N(y; 0, sigma^2 I + A prior_cov A^T).
double linear_gauss_log_evidence(const Eigen::MatrixXd& A, double sigma, const Eigen::MatrixXd& prior_cov,
                                 const Eigen::VectorXd& y);

}  // namespace vkr
