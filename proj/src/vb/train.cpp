#include "vaekrnet/vb/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "vaekrnet/numerics/adam.hpp"

namespace vkr {

namespace {

constexpr std::size_t kChunkRows = 8192;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Tensor> snapshot(const ParameterList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value);
  return out;
}

void restore(const ParameterList& params, const std::vector<Tensor>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0) / n)};
}

Tensor row_block(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out = Tensor::matrix(count, t.cols());
  std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(begin * t.cols()), count * t.cols(),
              out.values().begin());
  return out;
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t count) {
  Tensor out = Tensor::matrix(count, t.cols());
  for (std::size_t r = 0; r < count; ++r) {
    std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(idx[begin + r] * t.cols()), t.cols(),
                out.values().begin() + static_cast<std::ptrdiff_t>(r * t.cols()));
  }
  return out;
}

Tensor col_block(const Tensor& t, std::size_t begin, std::size_t count) {
  Tensor out = Tensor::matrix(t.rows(), count);
  out.matrix() = t.matrix().middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  return out;
}

/// One optimizer step. Returns the loss, or nullopt if the step was skipped.
std::optional<double> adam_step(Adam& adam, const ParameterList& params, const std::function<Var(Tape&)>& loss_fn) {
  try {
    Tape tape;
    const Var loss = loss_fn(tape);
    const double value = loss.value().item();
    if (!std::isfinite(value)) return std::nullopt;
    const Gradients grads = tape.backward(loss);
    if (!grads.all_finite()) return std::nullopt;
    adam.step(params, grads);
    return value;
  } catch (const NonFiniteError&) {
    return std::nullopt;
  }
}

/// Tracks the best snapshot, skipped-step streaks and the trace window.
class Loop {
 public:
  Loop(const ParameterList& params, std::size_t max_streak, TrainReport& report)
      : params_(params), max_streak_(max_streak), report_(report), best_(snapshot(params)) {}

  void start(std::pair<double, double> val) {
    report_.initial_val_loss = report_.best_val_loss = val.first;
    report_.initial_val_se = report_.best_val_se = val.second;
  }

  void record_step(std::optional<double> loss) {
    ++report_.steps;
    if (loss) {
      streak_ = 0;
      window_min_ = std::min(window_min_, *loss);
      return;
    }
    ++report_.skipped_steps;
    if (++streak_ > max_streak_) {
      restore(params_, best_);
      throw TrainingAborted("training aborted: " + std::to_string(streak_) +
                            " consecutive steps with a non-finite loss or gradient (" +
                            std::to_string(report_.skipped_steps) + " skipped in total)");
    }
  }

  /// Returns false when the callback asks to stop.
  bool validate(std::size_t iter, std::pair<double, double> val, double lambda, std::uint64_t seed,
                const ValidationCallback& callback) {
    TraceRow row{iter, window_min_, val.first, val.second, lambda, seed};
    window_min_ = kInf;
    report_.trace.push_back(row);
    if (val.first < report_.best_val_loss || std::isnan(report_.best_val_loss)) {
      report_.best_val_loss = val.first;
      report_.best_val_se = val.second;
      report_.best_iter = iter;
      best_ = snapshot(params_);
    }
    if (callback && !callback(row)) {
      report_.stopped_early = true;
      return false;
    }
    return true;
  }

  void finish() { restore(params_, best_); }

 private:
  ParameterList params_;
  std::size_t max_streak_;
  TrainReport& report_;
  std::vector<Tensor> best_;
  std::size_t streak_ = 0;
  double window_min_ = kInf;
};

std::pair<double, double> guarded(const std::function<std::pair<double, double>()>& eval) {
  try {
    return eval();
  } catch (const NonFiniteError&) {
    return {kInf, std::numeric_limits<double>::quiet_NaN()};
  }
}

}  // namespace

std::pair<double, double> evaluate_rows(const std::function<Var(Tape&, const Tensor&)>& rows, const Tensor& noise) {
  std::vector<double> values;
  values.reserve(noise.rows());
  for (std::size_t start = 0; start < noise.rows(); start += kChunkRows) {
    const std::size_t count = std::min(kChunkRows, noise.rows() - start);
    Tape tape;
    const Tensor v = rows(tape, row_block(noise, start, count)).value();
    values.insert(values.end(), v.values().begin(), v.values().end());
  }
  if (values.empty()) throw std::invalid_argument("evaluate_rows: no rows");
  return mean_and_se(values);
}

TrainReport minimize(const NoiseObjective& objective, const TrainConfig& config, double lambda,
                     const ValidationCallback& callback) {
  if (config.batch < 1) throw std::invalid_argument("training: batch size must be positive");
  if (config.validation_every < 1) throw std::invalid_argument("training: validation cadence must be positive");
  if (config.validation_size < 1) throw std::invalid_argument("training: validation size must be positive");
  Rng master(config.seed);
  Rng val_rng(master.next_seed());
  Rng rng(master.next_seed());
  const Tensor val_noise = gauss_sample(val_rng, {config.validation_size, objective.noise_dim});
  const auto validation = [&] { return guarded([&] { return evaluate_rows(objective.rows, val_noise); }); };

  TrainReport report;
  Loop loop(objective.params, config.max_nonfinite_streak, report);
  loop.start(validation());
  Adam adam(AdamConfig{config.learning_rate});
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const Tensor noise = gauss_sample(rng, {config.batch, objective.noise_dim});
    loop.record_step(adam_step(adam, objective.params, [&](Tape& t) { return ops::mean(objective.rows(t, noise)); }));
    if (it % config.validation_every == 0 || it == config.iterations) {
      if (!loop.validate(it, validation(), lambda, config.seed, callback)) break;
    }
  }
  loop.finish();
  return report;
}

TrainReport minimize_on_data(const DataObjective& objective, const Tensor& train, const Tensor& validation,
                             const DataTrainConfig& config, const ValidationCallback& callback) {
  if (config.minibatches < 1 || config.minibatches > train.rows()) {
    throw std::invalid_argument("training: minibatch count must lie in [1, training rows]");
  }
  if (config.validate_every_epochs < 1) throw std::invalid_argument("training: validation cadence must be positive");
  if (validation.rows() < 1) throw std::invalid_argument("training: empty validation set");
  Rng master(config.seed);
  const std::uint64_t val_seed = master.next_seed();
  Rng rng(master.next_seed());
  const auto eval = [&] {
    return guarded([&] {
      Rng noise(val_seed);
      return evaluate_rows([&](Tape& t, const Tensor& y) { return objective.rows(t, y, noise); }, validation);
    });
  };

  TrainReport report;
  Loop loop(objective.params, config.max_nonfinite_streak, report);
  loop.start(eval());
  Adam adam(AdamConfig{config.learning_rate});
  std::vector<std::size_t> order(train.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t N = train.rows(), B = config.minibatches;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t begin = b * N / B, end = (b + 1) * N / B;
      const Tensor batch = gather_rows(train, order, begin, end - begin);
      loop.record_step(adam_step(adam, objective.params,
                                 [&](Tape& t) { return ops::mean(objective.rows(t, batch, rng)); }));
    }
    if (epoch % config.validate_every_epochs == 0 || epoch == config.epochs) {
      if (!loop.validate(epoch, eval(), INFINITY, config.seed, callback)) break;
    }
  }
  loop.finish();
  return report;
}

TrainReport train(KRnet& model, const TargetDensity& target, const TrainConfig& config,
                  const ValidationCallback& callback) {
  if (model.dim() != target.dim) throw std::invalid_argument("training: model and target dimensions differ");
  if (!model.initialized()) model.initialize_identity();
  const NoiseObjective obj{model.parameters(), target.dim,
                           [&](Tape& t, const Tensor& z) { return krnet_vb_rows(t, model, target, z); }};
  return minimize(obj, config, INFINITY, callback);
}

TrainReport train(MeanFieldModel& model, const TargetDensity& target, const TrainConfig& config,
                  const ValidationCallback& callback) {
  if (model.dim() != target.dim) throw std::invalid_argument("training: model and target dimensions differ");
  const NoiseObjective obj{model.parameters(), target.dim,
                           [&](Tape& t, const Tensor& z) { return krnet_vb_rows(t, model, target, z); }};
  return minimize(obj, config, INFINITY, callback);
}

TrainReport train(VaeKrnet& model, const TargetDensity& target, const Lambda& lambda, const TrainConfig& config,
                  const ValidationCallback& callback) {
  if (model.data_dim() != target.dim) throw std::invalid_argument("training: model and target dimensions differ");
  if (!model.initialized()) {
    Rng init(config.seed ^ 0x5bd1e995ULL);
    model.initialize_for_target(std::max<std::size_t>(config.batch, 2), init);
  }
  const std::size_t d = model.latent_dim(), n = model.data_dim();
  const NoiseObjective obj{model.parameters(), d + n, [&](Tape& t, const Tensor& noise) {
                             return combine_vb_terms(
                                 vae_krnet_vb_terms(t, model, target, col_block(noise, 0, d), col_block(noise, d, n)),
                                 lambda);
                           }};
  return minimize(obj, config, lambda.value(), callback);
}

TwoStageResult train_two_stage(const VaeKrnet& model, const TargetDensity& target, const TrainConfig& first,
                               const TrainConfig& second, const Lambda& lambda, const ValidationCallback& first_callback,
                               const ValidationCallback& second_callback) {
  if (lambda.is_infinite()) throw std::invalid_argument("two-stage training: the second stage needs a finite lambda");
  VaeKrnet stage1 = model;
  TrainReport r1 = train(stage1, target, Lambda::infinite(), first, first_callback);
  VaeKrnet stage2 = stage1;
  TrainReport r2 = train(stage2, target, lambda, second, second_callback);
  return {std::move(stage1), std::move(stage2), std::move(r1), std::move(r2)};
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& trace) {
  out << "iter,train_loss,val_loss,lambda,seed\n";
  char buf[64];
  const auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const TraceRow& r : trace) {
    out << r.iter << ',' << num(r.train_loss) << ',' << num(r.val_loss) << ','
        << (std::isinf(r.lambda) ? std::string("inf") : num(r.lambda)) << ',' << r.seed << '\n';
  }
}

}  // namespace vkr
