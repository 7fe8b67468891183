#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

#include "vaekrnet/vb/vb.hpp"

namespace vkr {

/// Thrown when too many consecutive steps produce non-finite losses or
/// gradients.
class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t iterations = 0;
  /// Fresh N(0, I) rows per step.
  std::size_t batch = 1000;
  /// Fixed validation noise rows.
  std::size_t validation_size = 200000;
  std::size_t validation_every = 1000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Consecutive skipped steps tolerated before aborting.
  std::size_t max_nonfinite_streak = 50;
};

/// Training on a fixed data set split into shuffled minibatches.
struct DataTrainConfig {
  std::size_t epochs = 0;
  std::size_t minibatches = 4;
  std::size_t validate_every_epochs = 1;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t max_nonfinite_streak = 50;
};

struct TraceRow {
  /// Iteration (or epoch for data training) at which validation ran.
  std::size_t iter = 0;
  /// Minimum training loss since the previous row.
  double train_loss = 0.0;
  double val_loss = 0.0;
  /// Standard error of the validation mean.
  double val_se = 0.0;
  double lambda = INFINITY;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<TraceRow> trace;
  double initial_val_loss = 0.0;
  double initial_val_se = 0.0;
  double best_val_loss = 0.0;
  double best_val_se = 0.0;
  /// 0 when no validation improved on the starting point.
  std::size_t best_iter = 0;
  std::size_t skipped_steps = 0;
  std::size_t steps = 0;
  bool stopped_early = false;
};

/// Called after each validation; return false to stop training.
using ValidationCallback = std::function<bool(const TraceRow&)>;

/// Row-wise loss for noise rows (M x noise_dim); the training loss is the row mean.
struct NoiseObjective {
  ParameterList params;
  std::size_t noise_dim = 0;
  std::function<Var(Tape&, const Tensor&)> rows;
};

/// Adam on fresh noise minibatches with periodic validation on a fixed noise
/// set. On return the parameters hold the snapshot with the lowest
/// validation loss (the starting point counts as a candidate).
TrainReport minimize(const NoiseObjective& objective, const TrainConfig& config, double lambda = INFINITY,
                     const ValidationCallback& callback = {});

/// Row-wise loss for data rows; the Rng supplies any additional noise.
struct DataObjective {
  ParameterList params;
  std::function<Var(Tape&, const Tensor&, Rng&)> rows;
};

/// Adam over shuffled minibatches of `train`; validation uses `validation`
/// with the same noise stream every time. Restores the best snapshot.
TrainReport minimize_on_data(const DataObjective& objective, const Tensor& train, const Tensor& validation,
                             const DataTrainConfig& config, const ValidationCallback& callback = {});

/// Mean and standard error of a loss over fixed noise rows, chunked.
std::pair<double, double> evaluate_rows(const std::function<Var(Tape&, const Tensor&)>& rows, const Tensor& noise);

TrainReport train(KRnet& model, const TargetDensity& target, const TrainConfig& config,
                  const ValidationCallback& callback = {});
TrainReport train(MeanFieldModel& model, const TargetDensity& target, const TrainConfig& config,
                  const ValidationCallback& callback = {});
TrainReport train(VaeKrnet& model, const TargetDensity& target, const Lambda& lambda, const TrainConfig& config,
                  const ValidationCallback& callback = {});

struct TwoStageResult {
  /// Stage-1 model (lambda = infinity), used for the mean.
  VaeKrnet mean_model;
  /// Stage-2 model (finite lambda, started from stage 1), used for the variance.
  VaeKrnet variance_model;
  TrainReport first;
  TrainReport second;
};

TwoStageResult train_two_stage(const VaeKrnet& model, const TargetDensity& target, const TrainConfig& first,
                               const TrainConfig& second, const Lambda& lambda,
                               const ValidationCallback& first_callback = {},
                               const ValidationCallback& second_callback = {});

/// Header "iter,train_loss,val_loss,lambda,seed" and one line per row.
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace);

}  // namespace vkr
