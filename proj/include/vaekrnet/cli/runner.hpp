#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "vaekrnet/cli/run_spec.hpp"
#include "vaekrnet/experiments/experiments.hpp"
#include "vaekrnet/vb/train.hpp"

namespace vkr {

/// File-system failure: unreadable input, non-empty output directory, failed write.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Streams derived from RunSpec::seed, in draw order.
struct RunSeeds {
  std::uint64_t problem = 0;
  std::uint64_t init = 0;
  std::uint64_t train = 0;
  std::uint64_t train2 = 0;
  std::uint64_t entropy = 0;
  std::uint64_t stats = 0;
  std::uint64_t dump = 0;
};
RunSeeds derive_seeds(std::uint64_t seed);

/// Any trained model the runner produces.
using AnyModel = std::variant<VaeKrnet, KRnet, MeanFieldModel>;

/// Manifest kinds: "vae-krnet", "krnet", "mean-field".
Manifest model_manifest(const AnyModel& model);
AnyModel load_model(const Manifest& manifest);
/// Data-space rows (VAE types) or posterior samples (flows).
Tensor sample_model(const AnyModel& model, std::size_t count, Rng& rng);

/// Header y1..yn, one row per sample, %.17g values.
void write_samples_csv(std::ostream& out, const Tensor& samples);
/// Reads a file written by write_samples_csv.
Tensor read_samples_csv(const std::filesystem::path& path);
/// Writes `path` and `path.meta` (seed, count, source).
void dump_samples(const AnyModel& model, std::size_t count, std::uint64_t seed, const std::filesystem::path& path,
                  const std::string& source = "");

/// Stats whose mean part comes from `mean_samples` and variance part from
/// `var_samples` (the same tensor for single-model runs).
StatsReport split_stats(const Tensor& mean_samples, const Tensor& var_samples, const InverseProblem& problem,
                        const std::vector<double>& grid);

/// Observer for validation rows; `stage` is 1 or 2. Return false to stop
/// that stage early.
using RunCallback = std::function<bool(int stage, const TraceRow& row)>;

struct RunResult {
  RunSpec spec;
  RunSeeds seeds;
  /// h(Y) for linear experiments, -log C for the inverse problem.
  double reference = 0.0;
  /// Monte Carlo error of `reference` (0 when exact).
  double reference_se = 0.0;
  /// Stage 1 (or the only stage).
  TrainReport report;
  std::optional<TrainReport> stage2;
  /// Best validation loss of the model used for the variance.
  double final_val_loss = 0.0;
  double final_val_se = 0.0;
  /// Linear experiments: delta = final_val_loss - h(Y).
  std::optional<double> delta;
  std::optional<double> delta_se;
  /// Inverse experiment.
  std::optional<StatsReport> stats;
  std::optional<InverseProblem> inverse_problem;
  std::optional<LinearLatentProblem> linear_problem;
  /// Final model; for two-stage runs this is the stage-2 model and
  /// `mean_model` holds stage 1.
  std::optional<AnyModel> model;
  std::optional<AnyModel> mean_model;
};

/// Builds the problem, trains, evaluates. With a non-empty `out` the
/// directory must be absent or empty and receives:
///   config.txt, problem.json, trace.csv (+ trace_stage2.csv), delta.csv
///   (linear), stats.csv (inverse), model.manifest (+ model_stage1.manifest),
///   samples.csv + samples.csv.meta, summary.txt.
RunResult run_experiment(const RunSpec& spec, const RunCallback& callback = {});

/// Throws IoError unless `dir` is absent or an empty directory; creates it.
void prepare_output_dir(const std::filesystem::path& dir);
/// Writes `text` to `path`, throwing IoError on failure.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace vkr
