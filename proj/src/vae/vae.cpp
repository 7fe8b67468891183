#include "vaekrnet/vae/vae.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "vaekrnet/numerics/gaussian.hpp"

namespace vkr {

using namespace ops;

namespace {
std::vector<std::size_t> head_widths(std::size_t in, std::size_t out, std::size_t depth, std::size_t width) {
  std::vector<std::size_t> w{in};
  for (std::size_t i = 0; i < depth; ++i) w.push_back(width);
  w.push_back(2 * out);
  return w;
}
}  // namespace

GaussHead::GaussHead(std::size_t in, std::size_t out, std::size_t depth, std::size_t width, Rng& rng,
                     const std::string& name)
    : net_(head_widths(in, out, depth, width), rng, false, name) {}

GaussHead::Output GaussHead::forward(Tape& tape, const Var& input) const {
  const Var h = net_.forward(tape, input);
  const std::size_t d = out_dim();
  return {slice_cols(h, 0, d), clamp(slice_cols(h, d, d), -kLogStdClamp, kLogStdClamp)};
}

double diag_gauss_log_pdf(std::span<const double> mean, std::span<const double> std, std::span<const double> x) {
  if (mean.size() != x.size() || std.size() != x.size()) {
    throw std::invalid_argument("diag_gauss_log_pdf: dimension mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(std[i] > 0.0)) throw std::invalid_argument("diag_gauss_log_pdf: std must be positive");
    const double u = (x[i] - mean[i]) / std[i];
    total += -kHalfLog2Pi - std::log(std[i]) - 0.5 * u * u;
  }
  return total;
}

Vae::Vae(const VaeConfig& c, Rng& rng)
    : config(c),
      encoder(c.data_dim, c.latent_dim, c.depth, c.width, rng, "encoder"),
      decoder(c.latent_dim, c.data_dim, c.depth, c.width, rng, "decoder") {
  if (c.data_dim == 0 || c.latent_dim == 0 || (c.depth > 0 && c.width == 0)) {
    throw std::invalid_argument("vae: dimensions and hidden width must be positive");
  }
}

ParameterList Vae::parameters() {
  ParameterList out = encoder.parameters();
  for (Parameter* p : decoder.parameters()) out.push_back(p);
  return out;
}

ConstParameterList Vae::parameters() const {
  ConstParameterList out = encoder.parameters();
  for (const Parameter* p : decoder.parameters()) out.push_back(p);
  return out;
}

Var elbo_canonical_rows(Tape& tape, const Vae& vae, const Var& y, const Tensor& xi) {
  if (xi.rows() != y.rows() || xi.cols() != vae.config.latent_dim) {
    throw std::invalid_argument("elbo: noise shape mismatch");
  }
  const GaussHead::Output enc = vae.encoder.forward(tape, y);
  const Var noise = tape.constant(xi);
  const Var x = enc.mean + ops::exp(enc.log_std) * noise;
  const Var log_q = std_normal_log_pdf(noise) - tape.constant(Tensor::matrix(xi.rows(), 1)) - sum_rows(enc.log_std);
  const GaussHead::Output dec = vae.decoder.forward(tape, x);
  const Var log_lik = diag_gauss_log_pdf(y, dec.mean, dec.log_std);
  return log_lik + std_normal_log_pdf(x) - log_q;
}

Var elbo_canonical(Tape& tape, const Vae& vae, const Var& y, std::size_t J, Rng& rng) {
  if (J < 1) throw std::invalid_argument("elbo: need at least one sample");
  const std::size_t m = y.rows();
  // Stack J copies of the batch row-wise: block j holds rows [j m, (j+1) m).
  Tensor rep = Tensor::matrix(m * J, y.cols());
  for (std::size_t j = 0; j < J; ++j) {
    rep.matrix().middleRows(static_cast<Eigen::Index>(j * m), static_cast<Eigen::Index>(m)) = y.value().matrix();
  }
  const Tensor xi = gauss_sample(rng, {m * J, vae.config.latent_dim});
  const Var rows = elbo_canonical_rows(tape, vae, J == 1 ? y : tape.constant(std::move(rep)), xi);
  if (J == 1) return rows;
  Var total = slice_rows(rows, 0, m);
  for (std::size_t j = 1; j < J; ++j) total = total + slice_rows(rows, j * m, m);
  return mul_scalar(total, 1.0 / static_cast<double>(J));
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> linear_gauss_posterior(const Eigen::MatrixXd& A, double sigma,
                                                                   const Eigen::MatrixXd& prior_cov,
                                                                   const Eigen::VectorXd& y) {
  if (!(sigma > 0.0)) throw std::invalid_argument("linear posterior: sigma must be positive");
  if (A.rows() != y.size() || A.cols() != prior_cov.rows() || prior_cov.rows() != prior_cov.cols()) {
    throw std::invalid_argument("linear posterior: dimension mismatch");
  }
  const double s2 = sigma * sigma;
  const Eigen::FullPivLU<Eigen::MatrixXd> prior_lu(prior_cov);
  if (!prior_lu.isInvertible()) throw std::domain_error("linear posterior: singular prior covariance");
  const Eigen::MatrixXd precision = prior_lu.inverse() + A.transpose() * A / s2;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(precision);
  if (!lu.isInvertible()) throw std::domain_error("linear posterior: singular precision matrix");
  Eigen::MatrixXd cov = lu.inverse();
  cov = 0.5 * (cov + cov.transpose());
  Eigen::VectorXd mean = cov * A.transpose() * y / s2;
  return {std::move(mean), std::move(cov)};
}

double linear_gauss_log_evidence(const Eigen::MatrixXd& A, double sigma, const Eigen::MatrixXd& prior_cov,
                                 const Eigen::VectorXd& y) {
  const Eigen::Index n = y.size();
  const Eigen::MatrixXd cov =
      sigma * sigma * Eigen::MatrixXd::Identity(n, n) + A * prior_cov * A.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::domain_error("linear evidence: covariance not positive definite");
  const Eigen::VectorXd w = llt.matrixL().solve(y);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -kHalfLog2Pi * static_cast<double>(n) - 0.5 * logdet - 0.5 * w.squaredNorm();
}

}  // namespace vkr
