#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "vaekrnet/cli/runner.hpp"

using namespace vkr;

namespace {

RunSpec spec_from(const std::string& text) { return parse_run_spec(parse_config_text(text)); }

std::string error_of(const std::string& text) {
  try {
    spec_from(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("vkr_cli_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Small linear run that still has four minibatches and several trace rows.
const char* kLinearSmall =
    "experiment=linear-gaussian\nmodel=vae\nseed=3\nepochs=20\ntrain_size=4000\nvalidation=2000\n"
    "validate_every_epochs=5\nsamples=50\n";

}  // namespace

TEST_CASE("per-experiment defaults") {
  const RunSpec k = spec_from("experiment=inverse\nmodel=krnet\n");
  CHECK(k.L == 6);
  CHECK(k.K == 5);
  CHECK(k.N_L == 24);
  CHECK(k.n == 10);
  CHECK(k.sigma == 0.05);
  CHECK(k.lr == 1e-3);
  CHECK(k.batch == 100000);
  CHECK(k.validation == 200000);
  CHECK(k.stats_samples == k.validation);

  const RunSpec v = spec_from("experiment=inverse\nmodel=vae-krnet\n");
  CHECK(v.d == 4);
  CHECK(v.blocks == 2);
  CHECK(v.L_pr == 6);
  CHECK(v.L_en == 2);
  CHECK(v.N_D == 32);
  CHECK(v.lambda.is_infinite());
  CHECK(v.stage2_iterations == v.iterations);
  CHECK(spec_from("experiment=inverse\nmodel=vae-krnet\nd=5\n").blocks == 3);

  const RunSpec h2 = spec_from("experiment=hole2d\nmodel=vae-krnet\n");
  CHECK(h2.D == 1);
  CHECK(h2.L_pr == 2);
  CHECK(h2.L_en == 2);
  const RunSpec h3 = spec_from("experiment=hole3d\nmodel=vae-krnet\n");
  CHECK(h3.d == 3);
  CHECK(h3.L_pr == 8);
  CHECK(h3.D == 2);
  const RunSpec lin = spec_from("experiment=linear-gaussian\nmodel=vae\n");
  CHECK(lin.D == 2);
  CHECK(lin.train_size == 100000);
  CHECK(lin.minibatches == 4);
}

TEST_CASE("config validation names the offending key") {
  CHECK(error_of("experiment=inverse\nmodel=vae-krnet\nlambda=1\n").find("lambda") != std::string::npos);
  CHECK_FALSE(error_of("experiment=inverse\nmodel=vae-krnet\nlambda=0.5\n").empty());
  CHECK(spec_from("experiment=inverse\nmodel=vae-krnet\nlambda=inf\n").lambda.is_infinite());
  CHECK(spec_from("experiment=inverse\nmodel=vae-krnet\nlambda=2.5\n").lambda.value() == 2.5);

  const std::string dup = error_of("experiment=inverse\nmodel=krnet\nL=4\n\nL=5\n");
  CHECK(dup.find("duplicate key 'L'") != std::string::npos);
  CHECK(dup.find(":5:") != std::string::npos);
  CHECK(dup.find("line 3") != std::string::npos);

  CHECK(error_of("experiment=inverse\nmodel=krnet\nwidth=3\n").find("unknown key 'width'") != std::string::npos);
  CHECK(error_of("experiment=inverse\nmodel=krnet\nN_D=8\n").find("'N_D'") != std::string::npos);
  CHECK(error_of("experiment=inverse\nmodel=krnet\nlambda=2\n").find("'lambda'") != std::string::npos);
  CHECK(error_of("experiment=inverse\nmodel=vae\n").find("model") != std::string::npos);
  CHECK(error_of("experiment=hole2d\nmodel=krnet\n").find("model") != std::string::npos);
  CHECK(error_of("model=vae\n").find("experiment") != std::string::npos);
  CHECK(error_of("experiment=linear-gaussian\nmodel=vae\nd=11\n").find("d") != std::string::npos);
  CHECK(error_of("experiment=linear-gaussian\nmodel=vae\nepochs=1.5\n").find("epochs") != std::string::npos);
  CHECK(error_of("experiment=linear-gaussian\nmodel=vae\nsigma=-1\n").find("sigma") != std::string::npos);
  CHECK(error_of("experiment=linear-gaussian\nmodel=vae\nno equals sign\n").find("key=value") != std::string::npos);
  CHECK(spec_from("experiment=linear-gaussian\nmodel=vae\ntrain_size=1e5\n").train_size == 100000);
}

TEST_CASE("echo round-trips the resolved spec") {
  for (const char* text : {"experiment=inverse\nmodel=vae-krnet\nlambda=4\nseed=9\n",
                           "experiment=inverse\nmodel=mean-field\nsigma=0.1\n",
                           "experiment=hole3d\nmodel=vae-krnet\nprior_flow=false\n", kLinearSmall}) {
    CAPTURE(text);
    const std::string once = echo(spec_from(text));
    CHECK(echo(spec_from(once)) == once);
  }
}

TEST_CASE("runs are reproducible and refuse to overwrite") {
  RunSpec spec = spec_from(kLinearSmall);
  spec.out = scratch("a");
  const RunResult a = run_experiment(spec);
  const auto first = spec.out;
  spec.out = scratch("b");
  const RunResult b = run_experiment(spec);
  CHECK(a.final_val_loss == b.final_val_loss);
  for (const char* file : {"trace.csv", "delta.csv", "samples.csv", "model.manifest", "summary.txt", "config.txt"}) {
    CAPTURE(file);
    CHECK(std::filesystem::exists(first / file));
    CHECK(slurp(first / file) == slurp(spec.out / file));
  }
  CHECK_THROWS_AS(run_experiment(spec), IoError);
  CHECK(echo(parse_run_spec(read_config_file(first / "config.txt"))) == echo(a.spec));

  // The delta trace decreases over training.
  std::istringstream trace(slurp(first / "delta.csv"));
  std::string header, line;
  std::getline(trace, header);
  CHECK(header == "iter,delta,delta_se");
  std::vector<double> deltas;
  while (std::getline(trace, line)) deltas.push_back(std::stod(line.substr(line.find(',') + 1)));
  REQUIRE(deltas.size() == 4);
  CHECK(deltas.back() < deltas.front());
  CHECK(*a.delta == doctest::Approx(a.final_val_loss - a.reference));
  std::filesystem::remove_all(first);
  std::filesystem::remove_all(spec.out);
}

TEST_CASE("sample dumps") {
  Rng rng(1);
  KRnet flow(make_krnet_config(3, 2, 2, 6), rng);
  flow.initialize_identity();
  const AnyModel model = flow;
  const auto dir = scratch("dump");
  std::filesystem::create_directories(dir);

  dump_samples(model, 0, 5, dir / "empty.csv");
  CHECK(slurp(dir / "empty.csv") == "y1,y2,y3\n");
  CHECK(slurp(dir / "empty.csv.meta").find("count=0") != std::string::npos);

  // A reloaded manifest samples identically.
  dump_samples(model, 20, 5, dir / "a.csv");
  const AnyModel reloaded = load_model(model_manifest(model));
  dump_samples(reloaded, 20, 5, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  const Tensor back = read_samples_csv(dir / "a.csv");
  CHECK(back.rows() == 20);
  CHECK(back.cols() == 3);

  // The identity flow pushes N(0, I) to itself.
  Rng srng(2);
  const Tensor s = sample_model(model, 100000, srng);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const Eigen::VectorXd col = s.matrix().col(j);
    const double m = col.mean();
    const double v = (col.array() - m).square().sum() / static_cast<double>(col.size() - 1);
    CHECK(std::abs(m) < 4.0 / std::sqrt(1e5));
    // sd of the sample variance is sqrt(2 / N) for a unit Gaussian.
    CHECK(std::abs(v - 1.0) < 4.0 * std::sqrt(2.0 / 1e5));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("inverse runs: stats reproduce from the saved models, mean-field ranks last") {
  const std::string base =
      "experiment=inverse\niterations=600\nbatch=500\nvalidation=4000\nvalidation_every=200\nsamples=10\n";
  RunSpec vk = spec_from(base + "model=vae-krnet\nlambda=2\nstage2_iterations=200\n");
  vk.out = scratch("vk");
  const RunResult r = run_experiment(vk);
  REQUIRE(r.stats);
  REQUIRE(r.mean_model);
  CHECK(std::filesystem::exists(vk.out / "model_stage1.manifest"));
  CHECK(std::filesystem::exists(vk.out / "trace_stage2.csv"));

  // Resample from the manifests on disk the way the stats verb does.
  std::ifstream pin(vk.out / "problem.json");
  const InverseProblem problem = load_inverse_problem(pin);
  std::ifstream m1(vk.out / "model_stage1.manifest"), m2(vk.out / "model.manifest");
  const AnyModel mean_model = load_model(Manifest::read(m1));
  const AnyModel var_model = load_model(Manifest::read(m2));
  Rng srng(r.seeds.stats);
  const Tensor ms = sample_model(mean_model, vk.stats_samples, srng);
  const Tensor vs = sample_model(var_model, vk.stats_samples, srng);
  const StatsReport again = split_stats(ms, vs, problem, default_grid(vk.grid_points));
  CHECK(again.mean_error == r.stats->mean_error);
  CHECK(again.std_error == r.stats->std_error);
  std::ostringstream csv;
  write_stats_csv(csv, again);
  CHECK(csv.str() == slurp(vk.out / "stats.csv"));
  std::filesystem::remove_all(vk.out);

  const RunResult kr = run_experiment(spec_from(base + "model=krnet\n"));
  const RunResult mf = run_experiment(spec_from(base + "model=mean-field\n"));
  CHECK(kr.reference == doctest::Approx(mf.reference).epsilon(1e-14));
  CHECK(mf.final_val_loss > kr.final_val_loss);
  CHECK(kr.final_val_loss > kr.reference - 3 * kr.final_val_se);
}
