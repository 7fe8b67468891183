#include "vaekrnet/experiments/experiments.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "json.hpp"
#include "vaekrnet/numerics/gaussian.hpp"
#include "vaekrnet/vae/vae_krnet.hpp"

namespace vkr {

using Json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

Eigen::MatrixXd as_eigen(const Tensor& t) { return t.matrix(); }

Estimate mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
}

}  // namespace

// ---- linear latent model ----

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::gaussian:
      return "gaussian";
    case PriorKind::hole2d:
      return "hole2d";
    case PriorKind::hole3d:
      return "hole3d";
  }
  return "gaussian";
}

PriorKind prior_kind_from_string(const std::string& text) {
  if (text == "gaussian") return PriorKind::gaussian;
  if (text == "hole2d") return PriorKind::hole2d;
  if (text == "hole3d") return PriorKind::hole3d;
  throw std::invalid_argument("unknown prior kind '" + text + "' (expected gaussian, hole2d or hole3d)");
}

std::size_t hole_dims(PriorKind kind) {
  switch (kind) {
    case PriorKind::hole2d:
      return 2;
    case PriorKind::hole3d:
      return 3;
    default:
      return 0;
  }
}

HolePriorSpec default_hole_spec(std::size_t dims) {
  if (dims == 2) return {3.0, {kPi / 4}, 1.0};
  if (dims == 3) return {3.0, {kPi / 4, 3 * kPi / 4}, 1.0};
  throw std::invalid_argument("hole prior: dimension must be 2 or 3");
}

bool hole_constraint_holds(const HolePriorSpec& spec, std::span<const double> x) {
  for (std::size_t i = 0; i < spec.angles.size(); ++i) {
    const double c = std::cos(spec.angles[i]), s = std::sin(spec.angles[i]);
    const double u = spec.stretch * (c * x[i] - s * x[i + 1]);
    const double v = s * x[i] + c * x[i + 1];
    if (std::hypot(u, v) < spec.radius) return false;
  }
  return true;
}

Tensor hole_prior_sample(const HolePriorSpec& spec, std::size_t dims, std::size_t N, Rng& rng) {
  if (spec.angles.size() + 1 != dims) throw std::invalid_argument("hole prior: need one angle per adjacent pair");
  if (!(spec.radius >= 0.0) || !std::isfinite(spec.radius)) {
    throw std::invalid_argument("hole prior: radius must be finite and nonnegative");
  }
  Tensor out = Tensor::matrix(N, dims);
  std::vector<double> x(dims);
  std::size_t accepted = 0, attempts = 0;
  while (accepted < N) {
    for (double& v : x) v = rng.normal();
    ++attempts;
    if (hole_constraint_holds(spec, x)) {
      std::copy(x.begin(), x.end(), out.values().begin() + static_cast<std::ptrdiff_t>(accepted * dims));
      ++accepted;
    }
    if (attempts >= 100000 && static_cast<double>(accepted) < 1e-4 * static_cast<double>(attempts)) {
      throw std::domain_error("hole prior: acceptance rate below 1e-4; the cut radius is too large");
    }
  }
  return out;
}

LinearLatentProblem make_linear_problem(std::size_t n, std::size_t d, double sigma, PriorKind prior, Rng& rng) {
  if (const std::size_t h = hole_dims(prior); h != 0) {
    if (d != 0 && d != h) throw std::invalid_argument("linear problem: " + to_string(prior) + " fixes d = " + std::to_string(h));
    d = h;
  }
  if (n == 0 || d == 0) throw std::invalid_argument("linear problem: dimensions must be positive");
  if (!(sigma >= 0.0)) throw std::invalid_argument("linear problem: sigma must be nonnegative");
  LinearLatentProblem p;
  p.A.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < p.A.cols(); ++j) {
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) p.A(i, j) = rng.normal();
    p.A.col(j).normalize();
  }
  p.sigma = sigma;
  p.prior = prior;
  if (prior != PriorKind::gaussian) p.hole = default_hole_spec(d);
  return p;
}

Tensor sample_prior(const LinearLatentProblem& problem, std::size_t N, Rng& rng) {
  if (problem.prior == PriorKind::gaussian) return gauss_sample(rng, {N, problem.latent_dim()});
  return hole_prior_sample(problem.hole, problem.latent_dim(), N, rng);
}

Tensor gen_linear_data(const LinearLatentProblem& problem, const Tensor& x, Rng& rng) {
  if (x.cols() != problem.latent_dim()) throw std::invalid_argument("linear data: latent dimension mismatch");
  Tensor out = Tensor::matrix(x.rows(), problem.data_dim());
  out.matrix() = x.matrix() * problem.A.transpose();
  for (double& v : out.values()) v += problem.sigma * rng.normal();
  return out;
}

Tensor gen_linear_data(const LinearLatentProblem& problem, std::size_t N, Rng& rng) {
  if (N < 1) throw std::invalid_argument("linear data: N must be positive");
  return gen_linear_data(problem, sample_prior(problem, N, rng), rng);
}

double entropy_hY_analytic(const LinearLatentProblem& problem) {
  if (problem.prior != PriorKind::gaussian) {
    throw std::invalid_argument("analytic entropy needs the Gaussian prior; use the nested estimate");
  }
  const auto n = static_cast<double>(problem.data_dim());
  const Eigen::MatrixXd S = problem.sigma * problem.sigma * Eigen::MatrixXd::Identity(problem.A.rows(), problem.A.rows()) +
                            problem.A * problem.A.transpose();
  const Eigen::LLT<Eigen::MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw std::domain_error("analytic entropy: covariance is singular");
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return 0.5 * n * (1.0 + std::log(2.0 * kPi)) + 0.5 * log_det;
}

Estimate entropy_hY_nested_mc(const LinearLatentProblem& problem, std::size_t outer, std::size_t inner, Rng& rng) {
  if (outer < 2 || inner < 1) throw std::invalid_argument("nested entropy: need outer >= 2 and inner >= 1");
  if (!(problem.sigma > 0.0)) throw std::invalid_argument("nested entropy: sigma must be positive");
  const Eigen::MatrixXd Y = as_eigen(gen_linear_data(problem, outer, rng));
  const double n = static_cast<double>(problem.data_dim());
  const double norm = -n * kHalfLog2Pi - n * std::log(problem.sigma);
  const double inv_var = 1.0 / (problem.sigma * problem.sigma);
  std::vector<double> terms(outer), lik(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const Eigen::MatrixXd AX = as_eigen(sample_prior(problem, inner, rng)) * problem.A.transpose();
    const Eigen::VectorXd y = Y.row(static_cast<Eigen::Index>(o)).transpose();
    // |a - y|^2 = |a|^2 - 2 a.y + |y|^2, one matrix-vector product per outer draw.
    const Eigen::VectorXd sq = AX.rowwise().squaredNorm() - 2.0 * AX * y;
    const double yy = y.squaredNorm();
    for (std::size_t j = 0; j < inner; ++j) lik[j] = norm - 0.5 * inv_var * (sq(static_cast<Eigen::Index>(j)) + yy);
    terms[o] = -log_mean_exp(lik);
  }
  return mean_se(terms);
}

// ---- inverse problem ----

double basis(std::size_t i, double x) { return std::cos(static_cast<double>(i) * x) / std::sqrt(kPi); }

InverseProblem make_inverse_problem(const InverseProblemConfig& config, Rng& rng) {
  if (config.n == 0) throw std::invalid_argument("inverse problem: n must be positive");
  if (!(config.sigma > 0.0)) throw std::invalid_argument("inverse problem: sigma must be positive");
  if (!(config.gamma > 0.0)) throw std::invalid_argument("inverse problem: gamma must be positive");
  if (!(config.corr_length >= 0.0)) throw std::invalid_argument("inverse problem: correlation length must be nonnegative");
  InverseProblem p;
  p.config = config;
  if (p.config.collocation == 0) p.config.collocation = 2 * config.n;
  const auto n = static_cast<Eigen::Index>(config.n);
  const auto k = static_cast<Eigen::Index>(p.config.collocation);
  p.points.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) p.points(j) = rng.uniform(0.0, 2.0 * kPi);
  p.E.resize(k, n);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) p.E(j, i) = basis(static_cast<std::size_t>(i + 1), p.points(j));
  }
  p.B.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      p.B(i, j) = config.corr_length > 0.0 ? std::exp(-std::abs(static_cast<double>(i - j)) / config.corr_length)
                                           : (i == j ? 1.0 : 0.0);
    }
  }
  p.lambda.resize(n);
  p.prior_cov = Eigen::MatrixXd::Zero(n, n);
  p.y0.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double idx = static_cast<double>(i + 1);
    p.lambda(i) = std::pow(idx, -config.gamma);
    p.prior_cov(i, i) = std::pow(idx, -2.5);
    p.y0(i) = std::pow(idx, -2.0) * std::sin(idx);
  }
  p.prior_mean = Eigen::VectorXd::Zero(n);
  p.K = p.E * p.B * p.lambda.asDiagonal();
  p.xi0.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) p.xi0(j) = rng.normal();
  p.data = p.K * p.y0 + config.sigma * p.xi0;
  return p;
}

GaussianPosterior true_posterior(const InverseProblem& p) {
  const double s2 = p.sigma() * p.sigma();
  const Eigen::FullPivLU<Eigen::MatrixXd> prior_lu(p.prior_cov);
  if (!prior_lu.isInvertible()) throw std::domain_error("true posterior: prior covariance is singular");
  const Eigen::MatrixXd prior_prec = prior_lu.inverse();
  const Eigen::MatrixXd prec = prior_prec + p.K.transpose() * p.K / s2;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(prec);
  if (!lu.isInvertible()) throw std::domain_error("true posterior: posterior precision is singular");
  GaussianPosterior out;
  out.cov = lu.inverse();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  out.mean = out.cov * (p.K.transpose() * p.data / s2 + prior_prec * p.prior_mean);
  return out;
}

double log_norm_const(const InverseProblem& p) {
  const GaussianPosterior post = true_posterior(p);
  const Eigen::LLT<Eigen::MatrixXd> llt(post.cov);
  if (llt.info() != Eigen::Success) throw std::domain_error("normalization constant: posterior covariance not positive definite");
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n = static_cast<double>(p.dim());
  const double s2 = p.sigma() * p.sigma();
  const double prior_term = p.prior_mean.dot(p.prior_cov.fullPivLu().solve(p.prior_mean));
  const double post_term = post.mean.dot(llt.solve(post.mean));
  return 0.5 * (n * std::log(2.0 * kPi) + log_det) -
         (0.5 * p.data.squaredNorm() / s2 + 0.5 * prior_term - 0.5 * post_term);
}

double log_unnormalized_posterior(const InverseProblem& p, const Eigen::VectorXd& y) {
  const Eigen::VectorXd r = p.data - p.K * y;
  const Eigen::VectorXd d = y - p.prior_mean;
  return -0.5 * r.squaredNorm() / (p.sigma() * p.sigma()) - 0.5 * d.dot(p.prior_cov.fullPivLu().solve(d));
}

TargetDensity posterior_target(const InverseProblem& p) {
  const double s2 = p.sigma() * p.sigma();
  // Quadratic form -1/2 y^T P y + y^T b + c, expanded once.
  const Eigen::MatrixXd prior_prec = p.prior_cov.fullPivLu().inverse();
  const Eigen::MatrixXd P = prior_prec + p.K.transpose() * p.K / s2;
  const Eigen::VectorXd b = p.K.transpose() * p.data / s2 + prior_prec * p.prior_mean;
  const double c = -0.5 * p.data.squaredNorm() / s2 - 0.5 * p.prior_mean.dot(prior_prec * p.prior_mean);
  const Tensor prec = Tensor::from_matrix(P);
  Tensor lin = Tensor::matrix(p.dim(), 1);
  for (std::size_t i = 0; i < p.dim(); ++i) lin[i] = b(static_cast<Eigen::Index>(i));
  TargetDensity t;
  t.dim = p.dim();
  t.log_density = [prec, lin, c](Tape& tape, const Var& y) {
    using namespace ops;
    const Var quad = sum_rows(matmul(y, tape.constant(prec)) * y);
    return add_scalar(matmul(y, tape.constant(lin)) - mul_scalar(quad, 0.5), c);
  };
  t.neg_log_norm = -log_norm_const(p);
  return t;
}

Tensor sample_gaussian(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::size_t N, Rng& rng) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw std::domain_error("gaussian sampling: covariance not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();
  const Tensor z = gauss_sample(rng, {N, static_cast<std::size_t>(mean.size())});
  Tensor out = Tensor::matrix(N, static_cast<std::size_t>(mean.size()));
  out.matrix() = (z.matrix() * L.transpose()).rowwise() + mean.transpose();
  return out;
}

Estimate norm_const_mc(const InverseProblem& p, std::size_t N, Rng& rng, double widen) {
  const GaussianPosterior post = true_posterior(p);
  const Eigen::MatrixXd cov = widen * widen * post.cov;
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::MatrixXd L = llt.matrixL();
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  const double n = static_cast<double>(p.dim());
  const Tensor ys = sample_gaussian(post.mean, cov, N, rng);
  std::vector<double> w(N);
  double hi = -INFINITY;
  std::vector<double> logw(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Eigen::VectorXd y = ys.matrix().row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::VectorXd d = y - post.mean;
    const double log_q = -n * kHalfLog2Pi - 0.5 * log_det - 0.5 * d.dot(llt.solve(d));
    logw[i] = log_unnormalized_posterior(p, y) - log_q;
    hi = std::max(hi, logw[i]);
  }
  for (std::size_t i = 0; i < N; ++i) w[i] = std::exp(logw[i] - hi);
  const Estimate scaled = mean_se(w);
  // Returned on the log scale; se is the delta-method error of the log.
  return {hi + std::log(scaled.value), scaled.se / scaled.value};
}

// ---- statistics ----

std::vector<double> default_grid(std::size_t points) {
  if (points < 2) throw std::invalid_argument("grid: need at least two points");
  std::vector<double> x(points);
  for (std::size_t k = 0; k < points; ++k) x[k] = 2.0 * kPi * static_cast<double>(k) / static_cast<double>(points - 1);
  return x;
}

double trapezoid_l2(const std::vector<double>& x, const std::vector<double>& f) {
  if (x.size() != f.size() || x.empty()) throw std::invalid_argument("trapezoid: size mismatch or empty grid");
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < x.size(); ++k) {
    total += 0.5 * (x[k + 1] - x[k]) * (f[k] * f[k] + f[k + 1] * f[k + 1]);
  }
  return std::sqrt(total);
}

namespace {

Eigen::MatrixXd basis_matrix(std::size_t n, const std::vector<double>& grid) {
  Eigen::MatrixXd Phi(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(grid.size()));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      Phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = basis(i + 1, grid[k]);
    }
  }
  return Phi;
}

void fill_exact(StatsReport& r, const InverseProblem& problem, const Eigen::MatrixXd& Phi) {
  const GaussianPosterior post = true_posterior(problem);
  const Eigen::VectorXd m = Phi.transpose() * post.mean;
  const Eigen::VectorXd v = (Phi.transpose() * post.cov).cwiseProduct(Phi.transpose()).rowwise().sum();
  r.exact_mean.assign(m.data(), m.data() + m.size());
  r.exact_var.assign(v.data(), v.data() + v.size());
}

void fill_errors(StatsReport& r, const std::vector<double>& mean_se, const std::vector<double>& sd_se) {
  const std::size_t G = r.x.size();
  std::vector<double> dm(G), ds(G);
  for (std::size_t k = 0; k < G; ++k) {
    dm[k] = r.mean[k] - r.exact_mean[k];
    ds[k] = std::sqrt(std::max(r.var[k], 0.0)) - std::sqrt(std::max(r.exact_var[k], 0.0));
  }
  const double scale = trapezoid_l2(r.x, r.exact_mean);
  if (!(scale > 0.0)) throw std::domain_error("stats: exact mean has zero L2 norm");
  r.mean_error = trapezoid_l2(r.x, dm) / scale;
  r.std_error = trapezoid_l2(r.x, ds) / scale;
  r.mean_error_se = trapezoid_l2(r.x, mean_se) / scale;
  r.std_error_se = trapezoid_l2(r.x, sd_se) / scale;
}

}  // namespace

StatsReport stats_r(const Tensor& samples, const InverseProblem& problem, const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("stats: empty grid");
  if (samples.rows() < 2) throw std::invalid_argument("stats: need at least two samples");
  if (samples.cols() != problem.dim()) throw std::invalid_argument("stats: sample dimension mismatch");
  const Eigen::MatrixXd Phi = basis_matrix(problem.dim(), grid);
  const Eigen::MatrixXd R = samples.matrix() * Phi;  // N x G
  const double N = static_cast<double>(samples.rows());
  const Eigen::RowVectorXd mean = R.colwise().mean();
  const Eigen::MatrixXd centered = R.rowwise() - mean;
  const Eigen::RowVectorXd m2 = centered.array().square().colwise().sum() / N;
  const Eigen::RowVectorXd m4 = centered.array().pow(4).colwise().sum() / N;
  StatsReport r;
  r.x = grid;
  const std::size_t G = grid.size();
  r.mean.resize(G);
  r.var.resize(G);
  std::vector<double> mean_se(G), sd_se(G);
  for (std::size_t k = 0; k < G; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    r.mean[k] = mean(kk);
    r.var[k] = m2(kk) * N / (N - 1.0);
    mean_se[k] = std::sqrt(r.var[k] / N);
    const double var_se = std::sqrt(std::max(m4(kk) - m2(kk) * m2(kk), 0.0) / N);
    sd_se[k] = r.var[k] > 0.0 ? var_se / (2.0 * std::sqrt(r.var[k])) : 0.0;
  }
  fill_exact(r, problem, Phi);
  fill_errors(r, mean_se, sd_se);
  return r;
}

StatsReport stats_from_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const InverseProblem& problem,
                               const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("stats: empty grid");
  const Eigen::MatrixXd Phi = basis_matrix(problem.dim(), grid);
  const Eigen::VectorXd m = Phi.transpose() * mean;
  const Eigen::VectorXd v = (Phi.transpose() * cov).cwiseProduct(Phi.transpose()).rowwise().sum();
  StatsReport r;
  r.x = grid;
  r.mean.assign(m.data(), m.data() + m.size());
  r.var.assign(v.data(), v.data() + v.size());
  fill_exact(r, problem, Phi);
  fill_errors(r, std::vector<double>(grid.size(), 0.0), std::vector<double>(grid.size(), 0.0));
  return r;
}

void write_stats_csv(std::ostream& out, const StatsReport& r) {
  out << "x,mean,exact_mean,var,exact_var\n";
  char buf[160];
  for (std::size_t k = 0; k < r.x.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.x[k], r.mean[k], r.exact_mean[k], r.var[k],
                  r.exact_var[k]);
    out << buf;
  }
}

// ---- instance files ----

namespace {

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::MatrixXd matrix_from(const Json& j, const char* key) {
  const Json& rows = j.at(key);
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = r ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(rows.at(static_cast<std::size_t>(i)).size()) != c) {
      throw std::invalid_argument(std::string("instance file: ragged matrix '") + key + "'");
    }
    for (Eigen::Index k = 0; k < c; ++k) {
      m(i, k) = rows.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from(const Json& j, const char* key) {
  const auto v = j.at(key).get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Json parse_instance(std::istream& in, const std::string& kind) {
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("instance file: ") + e.what());
  }
  if (j.value("format", "") != "vaekrnet-problem" || j.value("kind", "") != kind) {
    throw std::invalid_argument("instance file: expected a '" + kind + "' problem");
  }
  return j;
}

template <class F>
auto json_guard(F&& f) {
  try {
    return f();
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("instance file: ") + e.what());
  }
}

}  // namespace

void save_problem(std::ostream& out, const LinearLatentProblem& p) {
  Json j;
  j["format"] = "vaekrnet-problem";
  j["kind"] = "linear";
  j["sigma"] = p.sigma;
  j["prior"] = to_string(p.prior);
  j["A"] = matrix_json(p.A);
  j["hole"] = {{"stretch", p.hole.stretch}, {"angles", p.hole.angles}, {"radius", p.hole.radius}};
  out << j.dump(1) << '\n';
}

void save_problem(std::ostream& out, const InverseProblem& p) {
  Json j;
  j["format"] = "vaekrnet-problem";
  j["kind"] = "inverse";
  j["config"] = {{"n", p.config.n},
                 {"collocation", p.config.collocation},
                 {"gamma", p.config.gamma},
                 {"corr_length", p.config.corr_length},
                 {"sigma", p.config.sigma}};
  j["points"] = vector_json(p.points);
  j["E"] = matrix_json(p.E);
  j["B"] = matrix_json(p.B);
  j["lambda"] = vector_json(p.lambda);
  j["K"] = matrix_json(p.K);
  j["prior_mean"] = vector_json(p.prior_mean);
  j["prior_cov"] = matrix_json(p.prior_cov);
  j["y0"] = vector_json(p.y0);
  j["xi0"] = vector_json(p.xi0);
  j["data"] = vector_json(p.data);
  out << j.dump(1) << '\n';
}

LinearLatentProblem load_linear_problem(std::istream& in) {
  const Json j = parse_instance(in, "linear");
  return json_guard([&] {
    LinearLatentProblem p;
    p.sigma = j.at("sigma").get<double>();
    p.prior = prior_kind_from_string(j.at("prior").get<std::string>());
    p.A = matrix_from(j, "A");
    const Json& h = j.at("hole");
    p.hole.stretch = h.at("stretch").get<double>();
    p.hole.angles = h.at("angles").get<std::vector<double>>();
    p.hole.radius = h.at("radius").get<double>();
    return p;
  });
}

InverseProblem load_inverse_problem(std::istream& in) {
  const Json j = parse_instance(in, "inverse");
  return json_guard([&] {
    InverseProblem p;
    const Json& c = j.at("config");
    p.config.n = c.at("n").get<std::size_t>();
    p.config.collocation = c.at("collocation").get<std::size_t>();
    p.config.gamma = c.at("gamma").get<double>();
    p.config.corr_length = c.at("corr_length").get<double>();
    p.config.sigma = c.at("sigma").get<double>();
    p.points = vector_from(j, "points");
    p.E = matrix_from(j, "E");
    p.B = matrix_from(j, "B");
    p.lambda = vector_from(j, "lambda");
    p.K = matrix_from(j, "K");
    p.prior_mean = vector_from(j, "prior_mean");
    p.prior_cov = matrix_from(j, "prior_cov");
    p.y0 = vector_from(j, "y0");
    p.xi0 = vector_from(j, "xi0");
    p.data = vector_from(j, "data");
    if (static_cast<std::size_t>(p.K.cols()) != p.config.n || p.data.size() != p.K.rows()) {
      throw std::invalid_argument("instance file: inconsistent dimensions");
    }
    return p;
  });
}

}  // namespace vkr
