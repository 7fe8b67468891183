// vaekrnet: run, sweep, stats and dump verbs over the experiment runner.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "vaekrnet/cli/runner.hpp"

namespace {

using namespace vkr;

enum ExitCode { kOk = 0, kInternal = 1, kConfig = 2, kIo = 3, kAborted = 4, kNumerical = 5 };

/// Config file, per-key flags and --set pairs for one subcommand.
struct ConfigSources {
  std::string file;
  std::map<std::string, std::string> flags;
  std::vector<std::string> sets;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", file, "key=value config file")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "Extra key=value override (repeatable)");
    for (const std::string& key : config_keys()) {
      if (key == "out") continue;  // -o,--out is declared per verb
      app.add_option("--" + key, flags[key], "Config key '" + key + "'")
          ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
    }
  }

  /// File entries, then flags and --set pairs replacing file values.
  ConfigEntries merged(CLI::App& app) const {
    ConfigEntries entries = file.empty() ? ConfigEntries{} : read_config_file(file);
    ConfigEntries overrides;
    for (const std::string& key : config_keys()) {
      if (key != "out" && app.count("--" + key)) overrides.emplace_back(key, flags.at(key));
    }
    const ConfigEntries extra = parse_config_text([&] {
      std::string text;
      for (const std::string& s : sets) text += s + "\n";
      return text;
    }(), "--set");
    for (const auto& [k, v] : extra) {
      for (const auto& [k2, v2] : overrides) {
        if (k == k2) throw ConfigError("duplicate key '" + k + "' (given as a flag and through --set)");
      }
      overrides.emplace_back(k, v);
    }
    for (const auto& [k, v] : overrides) {
      bool replaced = false;
      for (auto& entry : entries) {
        if (entry.first == k) {
          entry.second = v;
          replaced = true;
        }
      }
      if (!replaced) entries.emplace_back(k, v);
    }
    return entries;
  }
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

RunCallback progress(bool quiet) {
  if (quiet) return {};
  return [](int stage, const TraceRow& row) {
    std::fprintf(stderr, "stage %d  iter %zu  train %.6g  val %.6g +- %.2g\n", stage, row.iter, row.train_loss,
                 row.val_loss, row.val_se);
    return true;
  };
}

void print_result(const RunResult& r) {
  std::printf("final_val_loss %.10g +- %.3g\n", r.final_val_loss, r.final_val_se);
  if (r.delta) std::printf("delta %.6g +- %.3g (h(Y) = %.10g)\n", *r.delta, *r.delta_se, r.reference);
  if (r.stats) {
    std::printf("-log C %.10g, relative gap %.3g\n", r.reference, (r.final_val_loss - r.reference) / std::abs(r.reference));
    std::printf("mean error %.4g +- %.2g, std error %.4g +- %.2g\n", r.stats->mean_error, r.stats->mean_error_se,
                r.stats->std_error, r.stats->std_error_se);
  }
}

int run_verb(CLI::App& app, const ConfigSources& src, const std::string& out, bool quiet) {
  ConfigEntries entries = src.merged(app);
  if (!out.empty()) {
    std::erase_if(entries, [](const auto& e) { return e.first == "out"; });
    entries.emplace_back("out", out);
  }
  const RunSpec spec = parse_run_spec(entries);
  if (spec.out.empty()) throw ConfigError("out: an output directory is required (--out DIR)");
  print_result(run_experiment(spec, progress(quiet)));
  return kOk;
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int sweep_verb(CLI::App& app, const ConfigSources& src, const std::string& param, const std::string& values,
               const std::string& out, bool quiet) {
  const auto& keys = config_keys();
  if (param == "out" || std::find(keys.begin(), keys.end(), param) == keys.end()) {
    throw ConfigError("sweep: unknown parameter '" + param + "'");
  }
  const std::vector<std::string> grid = split_values(values);
  if (grid.empty()) throw ConfigError("sweep: --values is empty");
  ConfigEntries base = src.merged(app);
  std::erase_if(base, [&](const auto& e) { return e.first == "out" || e.first == param; });
  // Validate every point before any training starts.
  std::vector<RunSpec> specs;
  for (const std::string& v : grid) {
    ConfigEntries entries = base;
    entries.emplace_back(param, v);
    entries.emplace_back("out", (std::filesystem::path(out) / (param + "=" + v)).string());
    specs.push_back(parse_run_spec(entries));
  }
  prepare_output_dir(out);
  std::string table =
      "param,value,final_val_loss,final_val_se,reference,delta,delta_se,mean_error,mean_error_se,std_error,std_error_se\n";
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (!quiet) std::fprintf(stderr, "sweep %s=%s\n", param.c_str(), grid[i].c_str());
    const RunResult r = run_experiment(specs[i], progress(quiet));
    table += param + "," + grid[i] + "," + fmt(r.final_val_loss) + "," + fmt(r.final_val_se) + "," + fmt(r.reference) +
             "," + (r.delta ? fmt(*r.delta) : "") + "," + (r.delta_se ? fmt(*r.delta_se) : "") + "," +
             (r.stats ? fmt(r.stats->mean_error) + "," + fmt(r.stats->mean_error_se) + "," + fmt(r.stats->std_error) +
                            "," + fmt(r.stats->std_error_se)
                      : std::string(",,,")) +
             "\n";
    write_text(std::filesystem::path(out) / "sweep.csv", table);
  }
  std::printf("%s", table.c_str());
  return kOk;
}

void refuse_existing(const std::string& path) {
  if (std::filesystem::exists(path)) throw IoError("'" + path + "' already exists; refusing to overwrite");
}

AnyModel read_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest '" + path + "'");
  return load_model(Manifest::read(in));
}

int stats_verb(const std::string& problem_path, const std::string& model_path, const std::string& mean_model_path,
               const std::string& samples_path, std::size_t count, std::uint64_t seed, std::size_t grid_points,
               const std::string& out) {
  if (model_path.empty() == samples_path.empty()) throw ConfigError("stats: give exactly one of --model or --samples");
  if (!mean_model_path.empty() && model_path.empty()) throw ConfigError("stats: --mean-model needs --model");
  if (count < 2) throw ConfigError("count: need at least 2 samples");
  if (grid_points < 2) throw ConfigError("grid: need at least 2 points");
  refuse_existing(out);
  std::ifstream pin(problem_path);
  if (!pin) throw IoError("cannot read problem file '" + problem_path + "'");
  const InverseProblem problem = load_inverse_problem(pin);
  const std::vector<double> grid = default_grid(grid_points);
  StatsReport report;
  if (!samples_path.empty()) {
    report = stats_r(read_samples_csv(samples_path), problem, grid);
  } else {
    Rng rng(seed);
    const AnyModel model = read_model(model_path);
    if (!mean_model_path.empty()) {
      const Tensor mean_samples = sample_model(read_model(mean_model_path), count, rng);
      const Tensor var_samples = sample_model(model, count, rng);
      report = split_stats(mean_samples, var_samples, problem, grid);
    } else {
      report = stats_r(sample_model(model, count, rng), problem, grid);
    }
  }
  std::ostringstream csv;
  write_stats_csv(csv, report);
  write_text(out, csv.str());
  std::printf("mean error %.6g +- %.2g, std error %.6g +- %.2g\n", report.mean_error, report.mean_error_se,
              report.std_error, report.std_error_se);
  return kOk;
}

int dump_verb(const std::string& model_path, std::size_t count, std::uint64_t seed, const std::string& out) {
  refuse_existing(out);
  dump_samples(read_model(model_path), count, seed, out, model_path);
  return kOk;
}

int report(const char* category, const std::exception& e, int code) {
  std::fprintf(stderr, "%s: %s\n", category, e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"VAE-KRnet experiment runner"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "No progress lines on stderr");

  ConfigSources run_src, sweep_src;
  std::string run_out, sweep_out, sweep_param, sweep_values;
  CLI::App* run = app.add_subcommand("run", "Train one model and write its output directory");
  run_src.attach(*run);
  run->add_option("-o,--out", run_out, "Output directory (absent or empty)");

  CLI::App* sweep = app.add_subcommand("sweep", "Repeat a run over a grid of one key (e.g. lambda or d)");
  sweep_src.attach(*sweep);
  sweep->add_option("--param", sweep_param, "Key to vary")->required();
  sweep->add_option("--values", sweep_values, "Comma-separated values")->required();
  sweep->add_option("-o,--out", sweep_out, "Parent output directory (absent or empty)")->required();

  std::string problem_path, model_path, mean_model_path, samples_path, stats_out;
  std::size_t stats_count = 200000, grid_points = 256;
  std::uint64_t stats_seed = 0;
  CLI::App* stats = app.add_subcommand("stats", "Mean/variance statistics of r(x; Y) against the exact posterior");
  stats->add_option("--problem", problem_path, "Inverse problem file (problem.json)")->required();
  stats->add_option("--model", model_path, "Model manifest to sample");
  stats->add_option("--mean-model", mean_model_path, "Stage-1 manifest supplying the mean (two-stage runs)");
  stats->add_option("--samples", samples_path, "Sample CSV instead of a model");
  stats->add_option("--count", stats_count, "Samples drawn from the model")->capture_default_str();
  stats->add_option("--seed", stats_seed, "Sampling seed")->capture_default_str();
  stats->add_option("--grid", grid_points, "Grid points on [0, 2 pi]")->capture_default_str();
  stats->add_option("-o,--out", stats_out, "Output CSV")->required();

  std::string dump_model, dump_out;
  std::size_t dump_count = 1000;
  std::uint64_t dump_seed = 0;
  CLI::App* dump = app.add_subcommand("dump", "Write model samples as CSV");
  dump->add_option("--model", dump_model, "Model manifest")->required();
  dump->add_option("--count", dump_count, "Number of samples")->capture_default_str();
  dump->add_option("--seed", dump_seed, "Sampling seed")->capture_default_str();
  dump->add_option("-o,--out", dump_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kConfig;
  }

  try {
    if (*run) return run_verb(*run, run_src, run_out, quiet);
    if (*sweep) return sweep_verb(*sweep, sweep_src, sweep_param, sweep_values, sweep_out, quiet);
    if (*stats) {
      return stats_verb(problem_path, model_path, mean_model_path, samples_path, stats_count, stats_seed, grid_points,
                        stats_out);
    }
    if (*dump) return dump_verb(dump_model, dump_count, dump_seed, dump_out);
  } catch (const ConfigError& e) {
    return report("config error", e, kConfig);
  } catch (const IoError& e) {
    return report("io error", e, kIo);
  } catch (const ManifestError& e) {
    return report("io error", e, kIo);
  } catch (const TrainingAborted& e) {
    return report("training aborted", e, kAborted);
  } catch (const std::domain_error& e) {
    return report("numerical error", e, kNumerical);
  } catch (const std::invalid_argument& e) {
    return report("invalid input", e, kConfig);
  } catch (const std::exception& e) {
    return report("internal error", e, kInternal);
  }
  return kInternal;
}
