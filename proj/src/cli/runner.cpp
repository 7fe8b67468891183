#include "vaekrnet/cli/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vkr {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class... F>
struct Overloaded : F... {
  using F::operator()...;
};
template <class... F>
Overloaded(F...) -> Overloaded<F...>;

VaeKrnetConfig vae_krnet_config(const RunSpec& s) {
  VaeKrnetConfig c;
  c.vae = {s.n, s.d, s.D, s.N_D};
  c.blocks = s.blocks;
  c.prior_depth = s.L_pr;
  c.encoder_depth = s.L_en;
  c.flow_hidden = s.N_L;
  c.prior_flow = s.model == ModelKind::vae_krnet && s.prior_flow;
  c.encoder_flow = s.model == ModelKind::vae_krnet && s.encoder_flow;
  c.flow_rotation = s.model == ModelKind::vae_krnet && s.rotation;
  return c;
}

PriorKind prior_of(ExperimentKind e) {
  switch (e) {
    case ExperimentKind::hole2d:
      return PriorKind::hole2d;
    case ExperimentKind::hole3d:
      return PriorKind::hole3d;
    default:
      return PriorKind::gaussian;
  }
}

std::string trace_text(const std::vector<TraceRow>& trace) {
  std::ostringstream out;
  write_trace_csv(out, trace);
  return out.str();
}

std::string stats_text(const StatsReport& r) {
  std::ostringstream out;
  write_stats_csv(out, r);
  return out.str();
}

void append(std::string& out, const std::string& key, const std::string& value) { out += key + "=" + value + "\n"; }

void append_report(std::string& out, const std::string& prefix, const TrainReport& r) {
  append(out, prefix + "initial_val_loss", num(r.initial_val_loss));
  append(out, prefix + "best_iter", std::to_string(r.best_iter));
  append(out, prefix + "best_val_loss", num(r.best_val_loss));
  append(out, prefix + "best_val_se", num(r.best_val_se));
  append(out, prefix + "steps", std::to_string(r.steps));
  append(out, prefix + "skipped_steps", std::to_string(r.skipped_steps));
  append(out, prefix + "stopped_early", r.stopped_early ? "true" : "false");
}

std::size_t model_parameter_count(const AnyModel& m) {
  return std::visit([](const auto& x) { return parameter_count(x.parameters()); }, m);
}

void run_linear(const RunSpec& s, const RunCallback& callback, RunResult& res) {
  Rng prng(res.seeds.problem);
  LinearLatentProblem problem = make_linear_problem(s.n, s.d, s.sigma, prior_of(s.experiment), prng);
  if (problem.prior != PriorKind::gaussian) problem.hole.radius = s.hole_radius;
  const Tensor train = gen_linear_data(problem, s.train_size, prng);
  const Tensor validation = gen_linear_data(problem, s.validation, prng);
  if (problem.prior == PriorKind::gaussian) {
    res.reference = entropy_hY_analytic(problem);
  } else {
    Rng erng(res.seeds.entropy);
    const Estimate h = entropy_hY_nested_mc(problem, s.entropy_outer, s.entropy_inner, erng);
    res.reference = h.value;
    res.reference_se = h.se;
  }

  Rng irng(res.seeds.init);
  VaeKrnet model(vae_krnet_config(s), irng);
  const std::size_t first = s.train_size / s.minibatches;
  Tensor head = Tensor::matrix(first, s.n);
  std::copy_n(train.values().begin(), first * s.n, head.values().begin());
  model.initialize_for_data(head, irng);

  const std::size_t d = s.d;
  const DataObjective objective{model.parameters(), [&](Tape& t, const Tensor& y, Rng& rng) {
                                  return ops::neg(model.elbo(t, t.constant(y), gauss_sample(rng, {y.rows(), d})));
                                }};
  DataTrainConfig cfg;
  cfg.epochs = s.epochs;
  cfg.minibatches = s.minibatches;
  cfg.validate_every_epochs = s.validate_every_epochs;
  cfg.learning_rate = s.lr;
  cfg.seed = res.seeds.train;
  cfg.max_nonfinite_streak = s.max_nonfinite_streak;
  const ValidationCallback cb = [&](const TraceRow& row) {
    const bool go_on = !callback || callback(1, row);
    return go_on && !(s.stop_delta > 0.0 && delta_metric(-row.val_loss, res.reference) < s.stop_delta);
  };
  res.report = minimize_on_data(objective, train, validation, cfg, cb);
  res.final_val_loss = res.report.best_val_loss;
  res.final_val_se = res.report.best_val_se;
  res.delta = delta_metric(-res.final_val_loss, res.reference);
  res.delta_se = std::hypot(res.final_val_se, res.reference_se);
  res.linear_problem = std::move(problem);
  res.model = std::move(model);
}

void run_inverse(const RunSpec& s, const RunCallback& callback, RunResult& res) {
  InverseProblemConfig icfg;
  icfg.n = s.n;
  icfg.collocation = s.collocation;
  icfg.gamma = s.gamma;
  icfg.corr_length = s.corr_length;
  icfg.sigma = s.sigma;
  Rng prng(res.seeds.problem);
  InverseProblem problem = make_inverse_problem(icfg, prng);
  const TargetDensity target = posterior_target(problem);
  res.reference = -log_norm_const(problem);

  TrainConfig tc;
  tc.iterations = s.iterations;
  tc.batch = s.batch;
  tc.validation_size = s.validation;
  tc.validation_every = s.validation_every;
  tc.learning_rate = s.lr;
  tc.seed = res.seeds.train;
  tc.max_nonfinite_streak = s.max_nonfinite_streak;
  ValidationCallback cb1, cb2;
  if (callback) {
    cb1 = [&](const TraceRow& row) { return callback(1, row); };
    cb2 = [&](const TraceRow& row) { return callback(2, row); };
  }

  Rng irng(res.seeds.init);
  switch (s.model) {
    case ModelKind::krnet: {
      KRnetConfig kc = make_krnet_config(s.n, s.K, s.L, s.N_L);
      kc.rotation = s.rotation;
      kc.nonlinear = s.nonlinear;
      KRnet model(kc, irng);
      res.report = train(model, target, tc, cb1);
      res.model = std::move(model);
      break;
    }
    case ModelKind::mean_field: {
      MeanFieldModel model(s.n);
      res.report = train(model, target, tc, cb1);
      res.model = std::move(model);
      break;
    }
    case ModelKind::vae_krnet: {
      VaeKrnet model(vae_krnet_config(s), irng);
      if (!s.lambda.is_infinite() && s.two_stage) {
        TrainConfig second = tc;
        second.iterations = s.stage2_iterations;
        second.seed = res.seeds.train2;
        TwoStageResult two = train_two_stage(model, target, tc, second, s.lambda, cb1, cb2);
        res.report = std::move(two.first);
        res.stage2 = std::move(two.second);
        res.mean_model = std::move(two.mean_model);
        res.model = std::move(two.variance_model);
      } else {
        res.report = train(model, target, s.lambda, tc, cb1);
        res.model = std::move(model);
      }
      break;
    }
    case ModelKind::vae:
      throw ConfigError("model: vae applies to linear experiments only");
  }
  const TrainReport& last = res.stage2 ? *res.stage2 : res.report;
  res.final_val_loss = last.best_val_loss;
  res.final_val_se = last.best_val_se;

  Rng srng(res.seeds.stats);
  const std::vector<double> grid = default_grid(s.grid_points);
  if (res.mean_model) {
    const Tensor mean_samples = sample_model(*res.mean_model, s.stats_samples, srng);
    const Tensor var_samples = sample_model(*res.model, s.stats_samples, srng);
    res.stats = split_stats(mean_samples, var_samples, problem, grid);
  } else {
    const Tensor samples = sample_model(*res.model, s.stats_samples, srng);
    res.stats = stats_r(samples, problem, grid);
  }
  res.inverse_problem = std::move(problem);
}

std::string summary_text(const RunResult& r) {
  std::string out;
  append(out, "experiment", to_string(r.spec.experiment));
  append(out, "model", to_string(r.spec.model));
  append(out, "seed", std::to_string(r.spec.seed));
  append(out, "seed_problem", std::to_string(r.seeds.problem));
  append(out, "seed_init", std::to_string(r.seeds.init));
  append(out, "seed_train", std::to_string(r.seeds.train));
  append(out, "seed_train_stage2", std::to_string(r.seeds.train2));
  append(out, "seed_entropy", std::to_string(r.seeds.entropy));
  append(out, "seed_stats", std::to_string(r.seeds.stats));
  append(out, "seed_dump", std::to_string(r.seeds.dump));
  append(out, "parameters", std::to_string(model_parameter_count(*r.model)));
  append(out, r.spec.is_linear() ? "entropy_hY" : "neg_log_C", num(r.reference));
  append(out, r.spec.is_linear() ? "entropy_hY_se" : "neg_log_C_se", num(r.reference_se));
  append_report(out, "", r.report);
  if (r.stage2) append_report(out, "stage2_", *r.stage2);
  append(out, "final_val_loss", num(r.final_val_loss));
  append(out, "final_val_se", num(r.final_val_se));
  if (r.delta) {
    append(out, "delta", num(*r.delta));
    append(out, "delta_se", num(*r.delta_se));
  }
  if (r.stats) {
    append(out, "rel_loss_gap", num((r.final_val_loss - r.reference) / std::abs(r.reference)));
    append(out, "mean_error", num(r.stats->mean_error));
    append(out, "mean_error_se", num(r.stats->mean_error_se));
    append(out, "std_error", num(r.stats->std_error));
    append(out, "std_error_se", num(r.stats->std_error_se));
  }
  return out;
}

void write_outputs(const RunResult& r) {
  const std::filesystem::path& dir = r.spec.out;
  write_text(dir / "config.txt", echo(r.spec));
  {
    std::ostringstream p;
    if (r.linear_problem) save_problem(p, *r.linear_problem);
    if (r.inverse_problem) save_problem(p, *r.inverse_problem);
    write_text(dir / "problem.json", p.str());
  }
  write_text(dir / "trace.csv", trace_text(r.report.trace));
  if (r.stage2) write_text(dir / "trace_stage2.csv", trace_text(r.stage2->trace));
  if (r.delta) {
    std::string d = "iter,delta,delta_se\n";
    for (const TraceRow& row : r.report.trace) {
      d += std::to_string(row.iter) + "," + num(row.val_loss - r.reference) + "," +
           num(std::hypot(row.val_se, r.reference_se)) + "\n";
    }
    write_text(dir / "delta.csv", d);
  }
  if (r.stats) write_text(dir / "stats.csv", stats_text(*r.stats));
  {
    std::ostringstream m;
    model_manifest(*r.model).write(m);
    write_text(dir / "model.manifest", m.str());
  }
  if (r.mean_model) {
    std::ostringstream m;
    model_manifest(*r.mean_model).write(m);
    write_text(dir / "model_stage1.manifest", m.str());
  }
  dump_samples(*r.model, r.spec.samples, r.seeds.dump, dir / "samples.csv", "model.manifest");
  write_text(dir / "summary.txt", summary_text(r));
}

}  // namespace

RunSeeds derive_seeds(std::uint64_t seed) {
  Rng master(seed);
  RunSeeds s;
  s.problem = master.next_seed();
  s.init = master.next_seed();
  s.train = master.next_seed();
  s.train2 = master.next_seed();
  s.entropy = master.next_seed();
  s.stats = master.next_seed();
  s.dump = master.next_seed();
  return s;
}

Manifest model_manifest(const AnyModel& model) {
  Manifest m;
  std::visit(Overloaded{[&](const VaeKrnet& x) {
                          m.kind = "vae-krnet";
                          x.save(m);
                        },
                        [&](const KRnet& x) {
                          m.kind = "krnet";
                          x.save(m);
                        },
                        [&](const MeanFieldModel& x) {
                          m.kind = "mean-field";
                          x.save(m);
                        }},
             model);
  return m;
}

AnyModel load_model(const Manifest& manifest) {
  Rng rng(0);
  std::size_t cursor = 0;
  if (manifest.kind == "vae-krnet") {
    VaeKrnet m(VaeKrnet::config_from(manifest), rng);
    m.load(manifest, cursor);
    return m;
  }
  if (manifest.kind == "krnet") {
    KRnet m(KRnet::config_from(manifest), rng);
    m.load(manifest, cursor);
    return m;
  }
  if (manifest.kind == "mean-field") {
    MeanFieldModel m(manifest.get_size("dim"));
    m.load(manifest, cursor);
    return m;
  }
  throw ManifestError("manifest: unknown model kind '" + manifest.kind + "'");
}

Tensor sample_model(const AnyModel& model, std::size_t count, Rng& rng) {
  return std::visit([&](const auto& m) { return m.sample(count, rng); }, model);
}

void write_samples_csv(std::ostream& out, const Tensor& samples) {
  const std::size_t n = samples.cols();
  for (std::size_t c = 0; c < n; ++c) out << (c ? "," : "") << "y" << c + 1;
  out << "\n";
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out << (c ? "," : "") << num(samples.at(r, c));
    out << "\n";
  }
}

Tensor read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read samples file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("samples file '" + path.string() + "' is empty");
  const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw IoError("samples file '" + path.string() + "': bad value '" + cell + "' on row " + std::to_string(rows + 1));
      }
      ++c;
    }
    if (c != cols) throw IoError("samples file '" + path.string() + "': row " + std::to_string(rows + 1) + " has " +
                                 std::to_string(c) + " values, expected " + std::to_string(cols));
    ++rows;
  }
  return Tensor(Shape{rows, cols}, std::move(values));
}

void dump_samples(const AnyModel& model, std::size_t count, std::uint64_t seed, const std::filesystem::path& path,
                  const std::string& source) {
  Rng rng(seed);
  const std::size_t n = std::visit(
      Overloaded{[](const VaeKrnet& m) { return m.data_dim(); }, [](const KRnet& m) { return m.dim(); },
                 [](const MeanFieldModel& m) { return m.dim(); }},
      model);
  const Tensor samples = count ? sample_model(model, count, rng) : Tensor::matrix(0, n);
  std::ostringstream out;
  write_samples_csv(out, samples);
  write_text(path, out.str());
  std::string meta;
  append(meta, "seed", std::to_string(seed));
  append(meta, "count", std::to_string(count));
  if (!source.empty()) append(meta, "source", source);
  write_text(path.string() + ".meta", meta);
}

StatsReport split_stats(const Tensor& mean_samples, const Tensor& var_samples, const InverseProblem& problem,
                        const std::vector<double>& grid) {
  StatsReport m = stats_r(mean_samples, problem, grid);
  const StatsReport v = stats_r(var_samples, problem, grid);
  m.var = v.var;
  m.std_error = v.std_error;
  m.std_error_se = v.std_error_se;
  return m;
}

void prepare_output_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  if (std::filesystem::exists(dir, ec)) {
    if (!std::filesystem::is_directory(dir, ec)) throw IoError("output path '" + dir.string() + "' is not a directory");
    if (!std::filesystem::is_empty(dir, ec)) {
      throw IoError("output directory '" + dir.string() + "' is not empty; runs never overwrite earlier results");
    }
    return;
  }
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

RunResult run_experiment(const RunSpec& spec, const RunCallback& callback) {
  if (!spec.out.empty()) prepare_output_dir(spec.out);
  RunResult res;
  res.spec = spec;
  res.seeds = derive_seeds(spec.seed);
  if (spec.is_linear()) {
    run_linear(spec, callback, res);
  } else {
    run_inverse(spec, callback, res);
  }
  if (!spec.out.empty()) write_outputs(res);
  return res;
}

}  // namespace vkr
