// Python bindings: flows, VAE-KRnet, the two experiment problems and the
// experiment runner. Arrays cross the boundary as float64 (rows = samples).

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include "vaekrnet/cli/runner.hpp"

namespace py = pybind11;
using namespace vkr;

namespace {

using Rows = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowsRef = Eigen::Ref<const Rows>;

Tensor to_tensor(const RowsRef& m) { return Tensor::from_matrix(m); }
Rows to_rows(const Tensor& t) { return t.matrix(); }
Eigen::VectorXd to_column(const Tensor& t) { return Eigen::Map<const Eigen::VectorXd>(t.values().data(), static_cast<Eigen::Index>(t.size())); }

Tensor check_cols(const RowsRef& m, std::size_t cols, const char* what) {
  if (static_cast<std::size_t>(m.cols()) != cols) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(cols) + " columns, got " +
                                std::to_string(m.cols()));
  }
  return to_tensor(m);
}

py::dict stats_dict(const StatsReport& r) {
  py::dict d;
  d["x"] = r.x;
  d["mean"] = r.mean;
  d["var"] = r.var;
  d["exact_mean"] = r.exact_mean;
  d["exact_var"] = r.exact_var;
  d["mean_error"] = r.mean_error;
  d["mean_error_se"] = r.mean_error_se;
  d["std_error"] = r.std_error;
  d["std_error_se"] = r.std_error_se;
  return d;
}

py::dict report_dict(const TrainReport& r) {
  py::dict d;
  d["best_iter"] = r.best_iter;
  d["best_val_loss"] = r.best_val_loss;
  d["best_val_se"] = r.best_val_se;
  d["steps"] = r.steps;
  d["stopped_early"] = r.stopped_early;
  py::list trace;
  for (const TraceRow& row : r.trace) {
    trace.append(py::make_tuple(row.iter, row.train_loss, row.val_loss, row.val_se));
  }
  d["trace"] = trace;
  return d;
}

ConfigEntries entries_from(const py::object& config) {
  if (py::isinstance<py::str>(config)) return parse_config_text(config.cast<std::string>(), "<python>");
  ConfigEntries entries;
  for (const auto& [k, v] : config.cast<py::dict>()) {
    const py::object value = py::reinterpret_borrow<py::object>(v);
    std::string text;
    if (py::isinstance<py::bool_>(value)) {
      text = value.cast<bool>() ? "true" : "false";
    } else if (py::isinstance<py::float_>(value)) {
      text = py::repr(value).cast<std::string>();
    } else {
      text = py::str(value).cast<std::string>();
    }
    entries.emplace_back(py::str(k).cast<std::string>(), text);
  }
  return entries;
}

AnyModel read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest '" + path.string() + "'");
  return load_model(Manifest::read(in));
}

}  // namespace

PYBIND11_MODULE(_vaekrnet, m) {
  m.doc() = "KRnet, VAE-KRnet and variational Bayes experiments";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<KRnet>(m, "KRnet")
      .def(py::init([](std::size_t n, std::optional<std::size_t> blocks, std::size_t depth, std::size_t hidden, bool rotation,
                       bool nonlinear, std::uint64_t seed) {
             KRnetConfig c = make_krnet_config(n, blocks.value_or(std::min<std::size_t>(n, 5)), depth, hidden);
             c.rotation = rotation;
             c.nonlinear = nonlinear;
             Rng rng(seed);
             return KRnet(c, rng);
           }),
           py::arg("n"), py::arg("blocks") = py::none(), py::arg("depth") = 6, py::arg("hidden") = 24,
           py::arg("rotation") = false, py::arg("nonlinear") = false, py::arg("seed") = 0)
      .def_property_readonly("dim", &KRnet::dim)
      .def_property_readonly("schedule", [](const KRnet& k) { return k.config().schedule; })
      .def_property_readonly("num_parameters", [](const KRnet& k) { return parameter_count(k.parameters()); })
      .def(
          "forward",
          [](const KRnet& k, const RowsRef& y) {
            const FlowValues f = k.forward(check_cols(y, k.dim(), "forward"));
            return py::make_tuple(to_rows(f.out), to_column(f.logdet));
          },
          py::arg("y"), "Map data rows to latent rows; returns (z, log|det dz/dy|).")
      .def(
          "inverse",
          [](const KRnet& k, const RowsRef& z) {
            const FlowValues f = k.inverse(check_cols(z, k.dim(), "inverse"));
            return py::make_tuple(to_rows(f.out), to_column(f.logdet));
          },
          py::arg("z"))
      .def(
          "log_pdf", [](const KRnet& k, const RowsRef& y) { return to_column(k.log_pdf(check_cols(y, k.dim(), "log_pdf"))); },
          py::arg("y"))
      .def(
          "sample",
          [](const KRnet& k, std::size_t count, std::uint64_t seed) {
            Rng rng(seed);
            return to_rows(k.sample(count, rng));
          },
          py::arg("count"), py::arg("seed") = 0)
      .def(
          "initialize", [](KRnet& k, const RowsRef& batch) { k.initialize(check_cols(batch, k.dim(), "initialize")); },
          py::arg("batch"), "Data-dependent initialization of the scale-bias layers.")
      .def("initialize_identity", &KRnet::initialize_identity);

  py::class_<VaeKrnet>(m, "VaeKrnet")
      .def(py::init([](std::size_t n, std::size_t d, std::size_t D, std::size_t N_D, bool prior_flow, bool encoder_flow,
                       std::size_t L_pr, std::size_t L_en, std::size_t N_L, std::size_t blocks, std::uint64_t seed) {
             VaeKrnetConfig c;
             c.vae = VaeConfig{n, d, D, N_D};
             c.prior_flow = prior_flow;
             c.encoder_flow = encoder_flow;
             c.prior_depth = L_pr;
             c.encoder_depth = L_en;
             c.flow_hidden = N_L;
             c.blocks = blocks;
             Rng rng(seed);
             return VaeKrnet(c, rng);
           }),
           py::arg("n"), py::arg("d"), py::arg("D") = 2, py::arg("N_D") = 32, py::arg("prior_flow") = true,
           py::arg("encoder_flow") = true, py::arg("L_pr") = 4, py::arg("L_en") = 2, py::arg("N_L") = 32,
           py::arg("blocks") = 2, py::arg("seed") = 0)
      .def_property_readonly("data_dim", &VaeKrnet::data_dim)
      .def_property_readonly("latent_dim", &VaeKrnet::latent_dim)
      .def_property_readonly("num_parameters", [](const VaeKrnet& v) { return parameter_count(v.parameters()); })
      .def(
          "initialize_for_data",
          [](VaeKrnet& v, const RowsRef& y, std::uint64_t seed) {
            Rng rng(seed);
            v.initialize_for_data(check_cols(y, v.data_dim(), "initialize_for_data"), rng);
          },
          py::arg("y"), py::arg("seed") = 0)
      .def(
          "initialize_for_target",
          [](VaeKrnet& v, std::size_t batch, std::uint64_t seed) {
            Rng rng(seed);
            v.initialize_for_target(batch, rng);
          },
          py::arg("batch") = 1000, py::arg("seed") = 0)
      .def(
          "elbo",
          [](const VaeKrnet& v, const RowsRef& y, const RowsRef& xi) {
            Tape tape;
            const Tensor yt = check_cols(y, v.data_dim(), "elbo y");
            const Tensor xt = check_cols(xi, v.latent_dim(), "elbo xi");
            return to_column(v.elbo(tape, tape.constant(yt), xt).value());
          },
          py::arg("y"), py::arg("xi"), "Per-row lower bound with latent noise xi (one row per data row).")
      .def(
          "prior_log_pdf",
          [](const VaeKrnet& v, const RowsRef& x) {
            Tape tape;
            return to_column(v.prior_log_pdf(tape, tape.constant(check_cols(x, v.latent_dim(), "prior_log_pdf"))).value());
          },
          py::arg("x"))
      .def(
          "encoder_cond_log_pdf",
          [](const VaeKrnet& v, const RowsRef& x, const RowsRef& y) {
            Tape tape;
            const Var xv = tape.constant(check_cols(x, v.latent_dim(), "encoder_cond_log_pdf x"));
            const Var yv = tape.constant(check_cols(y, v.data_dim(), "encoder_cond_log_pdf y"));
            return to_column(v.encoder_cond_log_pdf(tape, xv, yv).value());
          },
          py::arg("x"), py::arg("y"))
      .def(
          "marginal_log_pdf",
          [](const VaeKrnet& v, const std::vector<double>& y, std::size_t N, std::uint64_t seed) {
            Rng rng(seed);
            return v.marginal_log_pdf_importance(y, N, rng);
          },
          py::arg("y"), py::arg("N") = 1000, py::arg("seed") = 0, "Importance-sampled log p(y).")
      .def(
          "sample",
          [](const VaeKrnet& v, std::size_t count, std::uint64_t seed) {
            Rng rng(seed);
            return to_rows(v.sample(count, rng));
          },
          py::arg("count"), py::arg("seed") = 0);

  py::class_<LinearLatentProblem>(m, "LinearProblem")
      .def(py::init([](std::size_t n, std::size_t d, double sigma, const std::string& prior, std::uint64_t seed) {
             Rng rng(seed);
             return make_linear_problem(n, d, sigma, prior_kind_from_string(prior), rng);
           }),
           py::arg("n") = 10, py::arg("d") = 2, py::arg("sigma") = 0.1, py::arg("prior") = "gaussian",
           py::arg("seed") = 0)
      .def_readonly("A", &LinearLatentProblem::A)
      .def_readonly("sigma", &LinearLatentProblem::sigma)
      .def(
          "sample_data",
          [](const LinearLatentProblem& p, std::size_t N, std::uint64_t seed) {
            Rng rng(seed);
            return to_rows(gen_linear_data(p, N, rng));
          },
          py::arg("N"), py::arg("seed") = 0)
      .def("entropy", &entropy_hY_analytic, "Exact h(Y) (Gaussian prior).")
      .def(
          "entropy_mc",
          [](const LinearLatentProblem& p, std::size_t outer, std::size_t inner, std::uint64_t seed) {
            Rng rng(seed);
            const Estimate e = entropy_hY_nested_mc(p, outer, inner, rng);
            return py::make_tuple(e.value, e.se);
          },
          py::arg("outer") = 10000, py::arg("inner") = 10000, py::arg("seed") = 0, "Nested Monte Carlo (h, se).");

  py::class_<InverseProblem>(m, "InverseProblem")
      .def(py::init([](std::size_t n, double sigma, double gamma, double corr_length, std::size_t collocation,
                       std::uint64_t seed) {
             InverseProblemConfig c;
             c.n = n;
             c.sigma = sigma;
             c.gamma = gamma;
             c.corr_length = corr_length;
             c.collocation = collocation;
             Rng rng(seed);
             return make_inverse_problem(c, rng);
           }),
           py::arg("n") = 10, py::arg("sigma") = 0.05, py::arg("gamma") = 1.0, py::arg("corr_length") = 3.0,
           py::arg("collocation") = 0, py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::filesystem::path& path) {
            std::ifstream in(path);
            if (!in) throw IoError("cannot read problem file '" + path.string() + "'");
            return load_inverse_problem(in);
          },
          py::arg("path"))
      .def_property_readonly("dim", &InverseProblem::dim)
      .def_readonly("K", &InverseProblem::K)
      .def_readonly("data", &InverseProblem::data)
      .def_readonly("prior_mean", &InverseProblem::prior_mean)
      .def_readonly("prior_cov", &InverseProblem::prior_cov)
      .def("posterior", [](const InverseProblem& p) {
        const GaussianPosterior g = true_posterior(p);
        return py::make_tuple(g.mean, g.cov);
      }, "Exact posterior (mean, cov).")
      .def("log_norm_const", &log_norm_const)
      .def(
          "log_unnormalized_posterior",
          [](const InverseProblem& p, const RowsRef& y) {
            check_cols(y, p.dim(), "log_unnormalized_posterior");
            Eigen::VectorXd out(y.rows());
            for (Eigen::Index r = 0; r < y.rows(); ++r) out(r) = log_unnormalized_posterior(p, y.row(r).transpose());
            return out;
          },
          py::arg("y"))
      .def(
          "stats",
          [](const InverseProblem& p, const RowsRef& samples, std::size_t grid_points) {
            return stats_dict(stats_r(check_cols(samples, p.dim(), "stats"), p, default_grid(grid_points)));
          },
          py::arg("samples"), py::arg("grid_points") = 256, "Mean/variance of r(x; Y) against the exact posterior.");

  m.def(
      "parse_config",
      [](const py::object& config) { return echo(parse_run_spec(entries_from(config))); }, py::arg("config"),
      "Validate a config (dict or key=value text) and return the fully resolved key=value lines.");

  m.def(
      "run",
      [](const py::object& config) {
        const RunSpec spec = parse_run_spec(entries_from(config));
        RunResult r;
        {
          py::gil_scoped_release release;
          r = run_experiment(spec);
        }
        py::dict d;
        d["config"] = echo(r.spec);
        d["reference"] = r.reference;
        d["reference_se"] = r.reference_se;
        d["final_val_loss"] = r.final_val_loss;
        d["final_val_se"] = r.final_val_se;
        d["report"] = report_dict(r.report);
        if (r.stage2) d["stage2"] = report_dict(*r.stage2);
        if (r.delta) {
          d["delta"] = *r.delta;
          d["delta_se"] = *r.delta_se;
        }
        if (r.stats) d["stats"] = stats_dict(*r.stats);
        return d;
      },
      py::arg("config"),
      "Train one configuration. `out` (if given) receives the same files as the command-line runner.");

  m.def(
      "sample_manifest",
      [](const std::filesystem::path& path, std::size_t count, std::uint64_t seed) {
        Rng rng(seed);
        return to_rows(sample_model(read_manifest(path), count, rng));
      },
      py::arg("path"), py::arg("count"), py::arg("seed") = 0, "Draw samples from a saved model.manifest.");
}
