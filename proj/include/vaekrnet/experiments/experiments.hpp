#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vaekrnet/numerics/rng.hpp"
#include "vaekrnet/vb/vb.hpp"

namespace vkr {

/// Value with its Monte Carlo standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

// ---- linear latent model y = A x + sigma xi ----

enum class PriorKind { gaussian, hole2d, hole3d };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& text);
/// Latent dimension implied by a hole prior; 0 for the Gaussian prior.
std::size_t hole_dims(PriorKind kind);

/// Standard normal restricted to ||R^{alpha,theta} x_pair|| >= radius with
/// R = diag(alpha, 1) * rotation(theta), for each adjacent coordinate pair.
struct HolePriorSpec {
  double stretch = 3.0;
  /// One angle per adjacent pair (x1,x2), (x2,x3), ...
  std::vector<double> angles;
  double radius = 1.0;
};

/// alpha = 3, theta = pi/4 in 2-D; theta = (pi/4, 3pi/4) in 3-D; radius 1.
HolePriorSpec default_hole_spec(std::size_t dims);
bool hole_constraint_holds(const HolePriorSpec& spec, std::span<const double> x);
/// Rejection sampling from N(0, I). Throws std::domain_error if the
/// acceptance rate drops below 1e-4.
Tensor hole_prior_sample(const HolePriorSpec& spec, std::size_t dims, std::size_t N, Rng& rng);

struct LinearLatentProblem {
  /// n x d with unit-norm columns.
  Eigen::MatrixXd A;
  double sigma = 0.1;
  PriorKind prior = PriorKind::gaussian;
  HolePriorSpec hole;

  std::size_t data_dim() const { return static_cast<std::size_t>(A.rows()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(A.cols()); }
};

/// Columns of A drawn from N(0, I) and normalized. Hole priors fix d (2 or 3).
LinearLatentProblem make_linear_problem(std::size_t n, std::size_t d, double sigma, PriorKind prior, Rng& rng);
Tensor sample_prior(const LinearLatentProblem& problem, std::size_t N, Rng& rng);
/// Rows y = A x + sigma xi with x from the prior.
Tensor gen_linear_data(const LinearLatentProblem& problem, std::size_t N, Rng& rng);
/// Rows y = A x + sigma xi for the given latent rows.
Tensor gen_linear_data(const LinearLatentProblem& problem, const Tensor& x, Rng& rng);

/// (n/2)(1 + log 2 pi) + 1/2 log|sigma^2 I + A A^T|; Gaussian prior only.
double entropy_hY_analytic(const LinearLatentProblem& problem);
/// -mean over outer data draws of log(mean over inner prior draws of p(y|x)).
/// Throws NonFiniteError if an inner average underflows to zero.
Estimate entropy_hY_nested_mc(const LinearLatentProblem& problem, std::size_t outer, std::size_t inner, Rng& rng);
/// delta = -elbo_mean - h(Y).
inline double delta_metric(double elbo_mean, double hY) { return -elbo_mean - hY; }

// ---- linear Bayesian inverse problem ----

struct InverseProblemConfig {
  std::size_t n = 10;
  /// Collocation count N_x; 0 means 2n.
  std::size_t collocation = 0;
  double gamma = 1.0;
  /// alpha_c in b_ij = exp(-|i-j| / alpha_c); 0 gives B = I.
  double corr_length = 3.0;
  double sigma = 0.05;
};

/// y_hat = K y + sigma xi with prior N(prior_mean, prior_cov). The generator
/// fields (points, E, B, lambda, y0, xi0) are informational.
struct InverseProblem {
  InverseProblemConfig config;
  Eigen::VectorXd points;
  /// N_x x n, E(j, i) = e_i(x_j).
  Eigen::MatrixXd E;
  Eigen::MatrixXd B;
  Eigen::VectorXd lambda;
  Eigen::MatrixXd K;
  Eigen::VectorXd prior_mean;
  Eigen::MatrixXd prior_cov;
  Eigen::VectorXd y0;
  Eigen::VectorXd xi0;
  Eigen::VectorXd data;

  std::size_t dim() const { return static_cast<std::size_t>(K.cols()); }
  double sigma() const { return config.sigma; }
};

/// e_i(x) = cos(i x) / sqrt(pi).
double basis(std::size_t i, double x);
/// Draws collocation points and xi0 from `rng`.
InverseProblem make_inverse_problem(const InverseProblemConfig& config, Rng& rng);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// cov = (prior_cov^-1 + K^T K / sigma^2)^-1, mean = cov (K^T y_hat / sigma^2 + prior_cov^-1 prior_mean).
/// Throws std::domain_error if either system is numerically singular.
GaussianPosterior true_posterior(const InverseProblem& problem);
/// log C with p_hat = C p_post.
double log_norm_const(const InverseProblem& problem);
/// log p_hat(y) = -|y_hat - K y|^2 / (2 sigma^2) - |y - prior_mean|^2_{prior_cov^-1} / 2.
double log_unnormalized_posterior(const InverseProblem& problem, const Eigen::VectorXd& y);
/// Differentiable p_hat with -log C attached.
TargetDensity posterior_target(const InverseProblem& problem);
/// N x n rows from N(mean, cov).
Tensor sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::size_t N, Rng& rng);
/// Importance estimate of int p_hat with the true posterior as proposal,
/// inflated by `widen` in standard deviation.
Estimate norm_const_mc(const InverseProblem& problem, std::size_t N, Rng& rng, double widen = 1.5);

// ---- statistics of r(x; Y) = sum_i Y_i e_i(x) ----

/// `points` uniform points on [0, 2 pi].
std::vector<double> default_grid(std::size_t points = 256);

struct StatsReport {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> exact_mean;
  std::vector<double> exact_var;
  /// ||mean - exact_mean|| / ||exact_mean|| (trapezoid L2 norms).
  double mean_error = 0.0;
  /// ||sqrt(var) - sqrt(exact_var)|| / ||exact_mean||.
  double std_error = 0.0;
  /// Sampling standard errors of the two relative errors.
  double mean_error_se = 0.0;
  double std_error_se = 0.0;
};

/// Requires at least two samples and a nonempty grid.
StatsReport stats_r(const Tensor& samples, const InverseProblem& problem, const std::vector<double>& grid);
/// Report built from given moments of Y instead of samples.
StatsReport stats_from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const InverseProblem& problem,
                               const std::vector<double>& grid);
/// Header "x,mean,exact_mean,var,exact_var".
void write_stats_csv(std::ostream& out, const StatsReport& report);

/// Trapezoid L2 norm of samples f(x_k).
double trapezoid_l2(const std::vector<double>& x, const std::vector<double>& f);

// ---- instance files (JSON) ----

void save_problem(std::ostream& out, const LinearLatentProblem& problem);
void save_problem(std::ostream& out, const InverseProblem& problem);
LinearLatentProblem load_linear_problem(std::istream& in);
InverseProblem load_inverse_problem(std::istream& in);

}  // namespace vkr
