#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "doctest.h"
#include "vaekrnet/numerics/gaussian.hpp"
#include "vaekrnet/numerics/grad_check.hpp"
#include "vaekrnet/vb/train.hpp"

using namespace vkr;
using namespace vkr::ops;

namespace {

double mean_of(const Tensor& t) { return t.matrix().mean(); }

double se_of(const Tensor& t) {
  const double m = mean_of(t);
  const double var = (t.matrix().array() - m).square().sum() / static_cast<double>(t.size() - 1);
  return std::sqrt(var / static_cast<double>(t.size()));
}

/// log N(y; 0, S) + shift as a differentiable target.
TargetDensity gaussian_target(const Eigen::MatrixXd& S, const Eigen::VectorXd& mu, double shift = 0.0) {
  const auto n = static_cast<std::size_t>(S.rows());
  const Eigen::MatrixXd P = S.inverse();
  const double log_det = std::log(S.determinant());
  TargetDensity t;
  t.dim = n;
  const Tensor prec = Tensor::from_matrix(P);
  const Tensor center = Tensor::row(std::vector<double>(mu.data(), mu.data() + mu.size()));
  const double c = -static_cast<double>(n) * kHalfLog2Pi - 0.5 * log_det + shift;
  t.log_density = [prec, center, c](Tape& tape, const Var& y) {
    const Var r = y - tape.constant(center);
    return add_scalar(mul_scalar(sum_rows(matmul(r, tape.constant(prec)) * r), -0.5), c);
  };
  t.neg_log_norm = -shift;
  return t;
}

void set_affine_head(GaussHead& head, const Eigen::MatrixXd& M, const Eigen::VectorXd& log_std) {
  const std::size_t in = head.in_dim(), out = head.out_dim();
  Tensor w = Tensor::matrix(in, 2 * out), b = Tensor::matrix(1, 2 * out);
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) w.at(i, j) = M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  for (std::size_t j = 0; j < out; ++j) b[out + j] = log_std(static_cast<Eigen::Index>(j));
  head.net().weight(0).value = w;
  head.net().bias(0).value = b;
}

/// d = 1, n = 2 linear-Gaussian VAE-KRnet whose encoder is the exact
/// conditional of its own joint.
struct LinearVb {
  Eigen::MatrixXd A;
  double sigma;
  VaeKrnet model;
};

LinearVb linear_vb(Rng& rng) {
  Eigen::MatrixXd A(2, 1);
  A << 0.8, -0.6;
  const double sigma = 0.5;
  VaeKrnetConfig cfg;
  cfg.vae = VaeConfig{2, 1, 0, 4};
  cfg.prior_depth = 1;
  cfg.encoder_depth = 1;
  cfg.flow_hidden = 4;
  VaeKrnet model(cfg, rng);
  model.prior_flow()->initialize_identity();
  model.encoder_flow()->initialize_identity();
  const double post_var = 1.0 / (1.0 + (A.transpose() * A)(0, 0) / (sigma * sigma));
  set_affine_head(model.vae().decoder, A.transpose(), Eigen::VectorXd::Constant(2, std::log(sigma)));
  set_affine_head(model.vae().encoder, A * post_var / (sigma * sigma), Eigen::VectorXd::Constant(1, 0.5 * std::log(post_var)));
  return {A, sigma, std::move(model)};
}

KRnet random_krnet(std::size_t n, Rng& rng, std::size_t hidden = 6) {
  KRnet flow(make_krnet_config(n, std::min<std::size_t>(n, 2), 2, hidden), rng);
  flow.initialize_identity();
  for (Parameter* p : flow.parameters()) {
    if (!p->name.ends_with(".scale")) {
      for (double& v : p->value.values()) v += 0.2 * rng.normal();
    }
  }
  return flow;
}

TargetDensity flow_target(const KRnet& flow) {
  TargetDensity t;
  t.dim = flow.dim();
  t.log_density = [&flow](Tape& tape, const Var& y) { return flow.log_pdf(tape, y); };
  t.neg_log_norm = 0.0;
  return t;
}

}  // namespace

TEST_CASE("Lambda validation") {
  CHECK(Lambda::parse("inf").is_infinite());
  CHECK(Lambda(INFINITY).is_infinite());
  CHECK(Lambda::parse("2.5").value() == 2.5);
  CHECK(Lambda(4.0).str() == "4");
  CHECK_THROWS_AS(Lambda(1.0), std::invalid_argument);
  CHECK_THROWS_AS(Lambda(0.5), std::invalid_argument);
  CHECK_THROWS_AS(Lambda(-INFINITY), std::invalid_argument);
  CHECK_THROWS_AS(Lambda::parse("1"), std::invalid_argument);
  CHECK_THROWS_AS(Lambda::parse("abc"), std::invalid_argument);
  try {
    Lambda l(1.0);
    (void)l;
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("unbounded") != std::string::npos);
  }
}

TEST_CASE("krnet_vb_loss examples") {
  Rng rng(1);
  SUBCASE("target is the model's own density") {
    const KRnet flow = random_krnet(3, rng);
    Tape tape;
    const Tensor rows = krnet_vb_rows(tape, flow, flow_target(flow), gauss_sample(rng, {500, 3})).value();
    CHECK(rows.matrix().cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("twice the standard normal and the identity model") {
    KRnet flow(make_krnet_config(2, 2, 1, 4), rng);
    flow.initialize_identity();
    const TargetDensity t = gaussian_target(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), std::log(2.0));
    Tape tape;
    const Tensor rows = krnet_vb_rows(tape, flow, t, gauss_sample(rng, {200, 2})).value();
    for (double v : rows.values()) CHECK(v == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    Tape t2;
    CHECK(krnet_vb_loss(t2, flow, t, 64, rng).value().item() == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("a -inf target reports the offending point") {
    KRnet flow(make_krnet_config(2, 2, 1, 4), rng);
    flow.initialize_identity();
    TargetDensity t;
    t.dim = 2;
    t.log_density = [](Tape& tape, const Var& y) {
      Tensor v = Tensor::matrix(y.rows(), 1);
      v[1] = -INFINITY;
      return tape.constant(v);
    };
    Tape tape;
    try {
      krnet_vb_rows(tape, flow, t, Tensor(Shape{2, 2}, {0.0, 0.0, 0.25, -1.5}));
      FAIL("expected an exception");
    } catch (const NonFiniteError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("sampled point 1") != std::string::npos);
      CHECK(msg.find("0.25, -1.5") != std::string::npos);
    }
    CHECK_THROWS_AS(krnet_vb_loss(tape, flow, t, 0, rng), std::invalid_argument);
  }
}

TEST_CASE("mean-field model equals a scale-bias layer bit for bit") {
  Rng rng(2);
  MeanFieldModel mf(3);
  mf.set(Tensor::row({0.3, -1.2, 2.0}), Tensor::row({0.5, 1.7, 0.2}));
  ScaleBias sb(3, "sb");
  sb.set(mf.scale(), mf.bias());
  Eigen::MatrixXd S(3, 3);
  S << 1.0, 0.3, 0.0, 0.3, 2.0, 0.1, 0.0, 0.1, 0.5;
  const TargetDensity t = gaussian_target(S, Eigen::VectorXd::Ones(3));
  const Tensor z = gauss_sample(rng, {100, 3});
  Tape a, b;
  CHECK(krnet_vb_rows(a, mf, t, z).value() == krnet_vb_rows(b, sb, t, z).value());
  Rng r1(7), r2(7);
  Tape c;
  const Tensor samples = mf.sample(1000, r1);
  const Tensor via_layer = sb.inverse(gauss_sample(r2, {1000, 3})).out;
  CHECK(samples == via_layer);
  // Density agrees with the diagonal Gaussian formula.
  const Tensor lp = mf.log_pdf(Tensor::row({0.0, 0.0, 0.0}));
  const std::vector<double> mean{0.3, -1.2, 2.0}, sd{0.5, 1.7, 0.2}, x{0.0, 0.0, 0.0};
  CHECK(lp.item() == doctest::Approx(diag_gauss_log_pdf(mean, sd, x)).epsilon(1e-13));
}

TEST_CASE("mean-field fit of N(3, 4) and the lower bound along the way") {
  // p_hat(y) = exp(-(y - 3)^2 / 8), so C = sqrt(8 pi).
  TargetDensity t;
  t.dim = 1;
  t.log_density = [](Tape&, const Var& y) { return mul_scalar(square(add_scalar(y, -3.0)), -1.0 / 8.0); };
  const double neg_log_c = -0.5 * std::log(8.0 * std::numbers::pi);
  t.neg_log_norm = neg_log_c;
  MeanFieldModel mf(1);
  TrainConfig cfg;
  cfg.iterations = 20000;
  cfg.batch = 500;
  cfg.validation_size = 20000;
  cfg.seed = 11;
  const TrainReport report = train(mf, t, cfg);
  CHECK(report.skipped_steps == 0);
  CHECK(report.trace.size() == 20);
  CHECK(std::abs(mf.mean().value[0] - 3.0) < 0.03);
  CHECK(std::abs(std::exp(mf.log_std().value[0]) - 2.0) < 0.02);
  CHECK(std::abs(report.best_val_loss - neg_log_c) < 3.0 * report.best_val_se + 1e-4);
  CHECK(report.initial_val_loss >= neg_log_c - 3.0 * report.initial_val_se);
  for (const TraceRow& row : report.trace) {
    CHECK(row.val_loss >= neg_log_c - 3.0 * row.val_se);
    CHECK(row.train_loss >= neg_log_c - 0.05);
  }
}

TEST_CASE("scaling the target shifts losses and leaves gradients alone") {
  Rng rng(3);
  const KRnet flow = random_krnet(3, rng);
  Eigen::MatrixXd S(3, 3);
  S << 1.0, 0.3, 0.0, 0.3, 2.0, 0.1, 0.0, 0.1, 0.5;
  const TargetDensity base = gaussian_target(S, Eigen::VectorXd::Zero(3));
  const TargetDensity scaled = base.shifted(std::log(5.0));
  CHECK(*scaled.neg_log_norm == doctest::Approx(-std::log(5.0)));
  const Tensor z = gauss_sample(rng, {64, 3});
  Tape a, b;
  const Var la = mean(krnet_vb_rows(a, flow, base, z));
  const Var lb = mean(krnet_vb_rows(b, flow, scaled, z));
  CHECK(lb.value().item() - la.value().item() == doctest::Approx(-std::log(5.0)).epsilon(1e-12));
  const Gradients ga = a.backward(la), gb = b.backward(lb);
  for (const Parameter* p : flow.parameters()) {
    const Tensor x = ga.at(*p), y = gb.at(*p);
    CHECK((x.matrix() - y.matrix()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + x.matrix().cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("VAE-KRnet variational loss") {
  Rng rng(4);
  LinearVb lv = linear_vb(rng);
  const Eigen::MatrixXd S = lv.sigma * lv.sigma * Eigen::MatrixXd::Identity(2, 2) + lv.A * lv.A.transpose();
  const double shift = 1.3;
  const TargetDensity target = gaussian_target(S, Eigen::VectorXd::Zero(2), shift);
  const std::size_t N = 20000;
  const Tensor xi = gauss_sample(rng, {N, 1});
  const Tensor eta = gauss_sample(rng, {N, 2});

  SUBCASE("lambda = infinity at the optimum gives -log C") {
    Tape tape;
    const Tensor rows = combine_vb_terms(vae_krnet_vb_terms(tape, lv.model, target, xi, eta), Lambda::infinite()).value();
    CHECK(rows.matrix().cwiseAbs().maxCoeff() > 0.0);
    for (std::size_t i = 0; i < N; i += 97) CHECK(rows[i] == doctest::Approx(-shift).epsilon(1e-9));
  }
  SUBCASE("term-by-term decomposition") {
    Tape tape;
    const VbTerms t = vae_krnet_vb_terms(tape, lv.model, target, xi, eta);
    const double lambda = 2.5;
    const Tensor inf = combine_vb_terms(t, Lambda::infinite()).value();
    const Tensor fin = combine_vb_terms(t, Lambda(lambda)).value();
    for (std::size_t i = 0; i < N; i += 101) {
      const double expect = t.fit.value()[i] - t.log_q.value()[i] -
                            ((lambda - 1.0) * t.fit.value()[i] + t.log_px.value()[i] - lambda * t.log_q.value()[i]);
      CHECK(inf[i] - fin[i] == doctest::Approx(expect).epsilon(1e-10));
    }
    // log p_X is the standard normal at x = xi under an identity prior flow.
    CHECK((t.log_px.value().matrix() - std_normal_log_pdf(xi).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("lambda = 2 adds minus the mutual information") {
    Tape tape;
    const VbTerms t = vae_krnet_vb_terms(tape, lv.model, target, xi, eta);
    const Tensor two = combine_vb_terms(t, Lambda(2.0)).value();
    const Tensor inf = combine_vb_terms(t, Lambda::infinite()).value();

    // Nested Monte Carlo: I(X;Y) = E[log p(y|x) - log E_x'[p(y|x')]].
    Rng mc(99);
    const std::size_t outer = 4000, inner = 4000;
    const Tensor x_in = gauss_sample(mc, {inner, 1});
    Tensor terms = Tensor::matrix(outer, 1);
    std::vector<double> inner_lp(inner);
    for (std::size_t o = 0; o < outer; ++o) {
      const double x = mc.normal();
      Eigen::Vector2d y = lv.A.col(0) * x;
      y(0) += lv.sigma * mc.normal();
      y(1) += lv.sigma * mc.normal();
      const auto log_lik = [&](double xv) {
        const Eigen::Vector2d r = (y - lv.A.col(0) * xv) / lv.sigma;
        return -2.0 * kHalfLog2Pi - 2.0 * std::log(lv.sigma) - 0.5 * r.squaredNorm();
      };
      for (std::size_t j = 0; j < inner; ++j) inner_lp[j] = log_lik(x_in[j]);
      terms[o] = log_lik(x) - log_mean_exp(inner_lp);
    }
    const double mi = mean_of(terms);
    const double analytic = 0.5 * std::log(1.0 + (lv.A.transpose() * lv.A)(0, 0) / (lv.sigma * lv.sigma));
    CHECK(std::abs(mi - analytic) < 3.0 * se_of(terms));

    const double combined = std::sqrt(se_of(two) * se_of(two) + se_of(inf) * se_of(inf) + se_of(terms) * se_of(terms));
    CHECK(std::abs(mean_of(two) - (mean_of(inf) - mi)) < 3.0 * combined);
  }
}

TEST_CASE("variational loss gradients") {
  Rng rng(5);
  Eigen::MatrixXd S(3, 3);
  S << 1.0, 0.3, 0.0, 0.3, 2.0, 0.1, 0.0, 0.1, 0.5;
  const TargetDensity t = gaussian_target(S, Eigen::VectorXd::Ones(3));
  SUBCASE("krnet") {
    KRnet flow = random_krnet(3, rng, 8);
    CHECK(parameter_count(std::as_const(flow).parameters()) <= 2000);
    const Tensor z = gauss_sample(rng, {16, 3});
    const GradCheckReport r =
        grad_check_report([&](Tape& tape) { return mean(krnet_vb_rows(tape, flow, t, z)); }, flow.parameters());
    CHECK(r.normwise_relative_error < 1e-4);
  }
  SUBCASE("mean-field") {
    MeanFieldModel mf(3);
    mf.set(Tensor::row({0.3, -1.2, 2.0}), Tensor::row({0.5, 1.7, 0.2}));
    const Tensor z = gauss_sample(rng, {16, 3});
    const GradCheckReport r =
        grad_check_report([&](Tape& tape) { return mean(krnet_vb_rows(tape, mf, t, z)); }, mf.parameters());
    CHECK(r.normwise_relative_error < 1e-6);
  }
  SUBCASE("vae-krnet, both lambda paths") {
    VaeKrnetConfig cfg;
    cfg.vae = VaeConfig{3, 2, 1, 6};
    cfg.prior_depth = 2;
    cfg.encoder_depth = 2;
    cfg.flow_hidden = 6;
    VaeKrnet model(cfg, rng);
    model.initialize_for_target(64, rng);
    for (Parameter* p : model.parameters()) {
      for (double& v : p->value.values()) v += 0.1 * rng.normal();
    }
    CHECK(parameter_count(std::as_const(model).parameters()) <= 2000);
    const Tensor xi = gauss_sample(rng, {12, 2});
    const Tensor eta = gauss_sample(rng, {12, 3});
    for (const Lambda& lambda : {Lambda::infinite(), Lambda(2.0)}) {
      const GradCheckReport r = grad_check_report(
          [&](Tape& tape) { return mean(combine_vb_terms(vae_krnet_vb_terms(tape, model, t, xi, eta), lambda)); },
          model.parameters());
      CHECK(r.normwise_relative_error < 1e-4);
    }
  }
}

TEST_CASE("training contract") {
  Rng rng(6);
  Eigen::MatrixXd S(2, 2);
  S << 1.0, 0.5, 0.5, 2.0;
  const TargetDensity t = gaussian_target(S, Eigen::VectorXd::Ones(2));
  TrainConfig cfg;
  cfg.batch = 64;
  cfg.validation_size = 2000;
  cfg.validation_every = 50;
  cfg.seed = 3;

  SUBCASE("zero budget returns the initial model") {
    KRnet flow = random_krnet(2, rng);
    const KRnet before = flow;
    const TrainReport r = train(flow, t, cfg);
    CHECK(r.trace.empty());
    for (std::size_t i = 0; i < flow.parameters().size(); ++i) {
      CHECK(flow.parameters()[i]->value == std::as_const(before).parameters()[i]->value);
    }
  }
  SUBCASE("equal seeds give identical traces and parameters") {
    cfg.iterations = 120;
    KRnet a = random_krnet(2, rng);
    KRnet b = a;
    const TrainReport ra = train(a, t, cfg);
    const TrainReport rb = train(b, t, cfg);
    std::ostringstream sa, sb;
    write_trace_csv(sa, ra.trace);
    write_trace_csv(sb, rb.trace);
    CHECK(sa.str() == sb.str());
    CHECK(ra.trace.size() == 3);
    CHECK(ra.trace.back().iter == 120);
    CHECK(sa.str().starts_with("iter,train_loss,val_loss,lambda,seed\n50,"));
    for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(a.parameters()[i]->value == b.parameters()[i]->value);
  }
  SUBCASE("the best snapshot is kept") {
    cfg.iterations = 300;
    MeanFieldModel mf(2);
    const TrainReport r = train(mf, t, cfg);
    double best = r.initial_val_loss;
    for (const TraceRow& row : r.trace) best = std::min(best, row.val_loss);
    CHECK(r.best_val_loss == best);
    const auto [v, se] = evaluate_rows(
        [&](Tape& tape, const Tensor& z) { return krnet_vb_rows(tape, mf, t, z); },
        [&] {
          Rng master(cfg.seed);
          Rng val(master.next_seed());
          return gauss_sample(val, {cfg.validation_size, 2});
        }());
    (void)se;
    CHECK(v == doctest::Approx(best).epsilon(1e-12));
  }
  SUBCASE("callback stops early") {
    cfg.iterations = 1000;
    MeanFieldModel mf(2);
    std::size_t calls = 0;
    const TrainReport r = train(mf, t, cfg, [&](const TraceRow&) { return ++calls < 2; });
    CHECK(r.stopped_early);
    CHECK(r.trace.size() == 2);
    CHECK(r.steps == 100);
  }
  SUBCASE("non-finite steps are skipped, counted and eventually abort") {
    TargetDensity bad;
    bad.dim = 2;
    std::size_t call = 0;
    bad.log_density = [&](Tape& tape, const Var& y) {
      Tensor v = Tensor::matrix(y.rows(), 1);
      if (y.rows() == 64 && ++call % 3 == 0) v[0] = NAN;
      return tape.constant(v) + mul_scalar(sum_rows(square(y)), -0.5);
    };
    cfg.iterations = 30;
    MeanFieldModel mf(2);
    const TrainReport r = train(mf, bad, cfg);
    CHECK(r.skipped_steps == 10);
    CHECK(r.steps == 30);
    bad.log_density = [](Tape& tape, const Var& y) {
      Tensor v = Tensor::matrix(y.rows(), 1, NAN);
      return tape.constant(v) + sum_rows(y);
    };
    cfg.max_nonfinite_streak = 5;
    CHECK_THROWS_AS(train(mf, bad, cfg), TrainingAborted);
  }
  SUBCASE("two-stage with an empty second stage returns stage 1 twice") {
    VaeKrnetConfig vc;
    vc.vae = VaeConfig{2, 1, 1, 4};
    vc.prior_depth = 1;
    vc.encoder_depth = 1;
    vc.flow_hidden = 4;
    const VaeKrnet model(vc, rng);
    TrainConfig first = cfg, second = cfg;
    first.iterations = 50;
    second.iterations = 0;
    const TwoStageResult res = train_two_stage(model, t, first, second, Lambda(2.0));
    CHECK(res.first.trace.size() == 1);
    CHECK(res.second.trace.empty());
    const auto pa = res.mean_model.parameters(), pb = res.variance_model.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->value == pb[i]->value);
    CHECK_THROWS_AS(train_two_stage(model, t, first, second, Lambda::infinite()), std::invalid_argument);
  }
}

TEST_CASE("data training loop") {
  Rng rng(7);
  // Fit a mean-field Gaussian to data by maximum likelihood.
  Tensor data = gauss_sample(rng, {2000, 2});
  for (std::size_t r = 0; r < data.rows(); ++r) {
    data.at(r, 0) = 1.0 + 0.5 * data.at(r, 0);
    data.at(r, 1) = -2.0 + 3.0 * data.at(r, 1);
  }
  const Tensor val = gauss_sample(rng, {500, 2});
  MeanFieldModel mf(2);
  DataObjective obj{mf.parameters(), [&](Tape& tape, const Tensor& y, Rng&) {
                      return neg(diag_gauss_log_pdf(tape.constant(y), tape.param(mf.mean()), tape.param(mf.log_std())));
                    }};
  DataTrainConfig cfg;
  cfg.epochs = 1500;
  cfg.minibatches = 4;
  cfg.validate_every_epochs = 100;
  cfg.learning_rate = 1e-2;
  const TrainReport r = minimize_on_data(obj, data, data, cfg);
  CHECK(r.steps == 6000);
  CHECK(r.trace.size() == 15);
  CHECK(std::abs(mf.mean().value[0] - 1.0) < 0.05);
  CHECK(std::abs(mf.mean().value[1] + 2.0) < 0.2);
  CHECK(std::abs(std::exp(mf.log_std().value[1]) - 3.0) < 0.2);
  (void)val;
}
