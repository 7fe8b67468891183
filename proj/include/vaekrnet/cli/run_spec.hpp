#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "vaekrnet/vb/vb.hpp"

namespace vkr {

/// Invalid configuration: unknown or duplicate key, bad value, illegal
/// combination. The message names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ExperimentKind { linear_gaussian, hole2d, hole3d, inverse };
enum class ModelKind { vae, vae_krnet, krnet, mean_field };

std::string to_string(ExperimentKind kind);
std::string to_string(ModelKind kind);
ExperimentKind experiment_from_string(const std::string& text);
ModelKind model_from_string(const std::string& text);

/// Fully resolved run description. Field names follow the config keys.
struct RunSpec {
  ExperimentKind experiment = ExperimentKind::linear_gaussian;
  ModelKind model = ModelKind::vae;

  // problem
  std::size_t n = 10;
  /// Latent dimension of the data model and of VAE-type models.
  std::size_t d = 2;
  double sigma = 0.1;
  double hole_radius = 1.0;
  double gamma = 1.0;
  double corr_length = 3.0;
  /// 0 means 2n.
  std::size_t collocation = 0;

  // encoder/decoder
  std::size_t D = 2;
  std::size_t N_D = 32;
  // KRnet
  std::size_t L = 6;
  std::size_t K = 5;
  std::size_t N_L = 24;
  bool nonlinear = false;
  // VAE-KRnet flows
  std::size_t L_pr = 6;
  std::size_t L_en = 2;
  std::size_t blocks = 2;
  bool prior_flow = true;
  bool encoder_flow = true;
  bool rotation = false;
  Lambda lambda = Lambda::infinite();
  bool two_stage = true;
  std::size_t stage2_iterations = 500000;

  // training
  std::uint64_t seed = 0;
  double lr = 1e-3;
  std::size_t max_nonfinite_streak = 50;
  /// Posterior fitting.
  std::size_t iterations = 500000;
  std::size_t batch = 100000;
  std::size_t validation_every = 1000;
  /// Data fitting.
  std::size_t epochs = 2000;
  std::size_t train_size = 100000;
  std::size_t minibatches = 4;
  std::size_t validate_every_epochs = 10;
  /// Stop once a validation delta falls below this; 0 trains all epochs.
  double stop_delta = 0.0;
  /// Validation rows (data or noise).
  std::size_t validation = 200000;

  // diagnostics
  std::size_t entropy_outer = 10000;
  std::size_t entropy_inner = 10000;
  std::size_t stats_samples = 200000;
  std::size_t grid_points = 256;
  /// Rows written to samples.csv.
  std::size_t samples = 1000;

  std::filesystem::path out;

  bool is_linear() const { return experiment != ExperimentKind::inverse; }
};

using ConfigEntries = std::vector<std::pair<std::string, std::string>>;

/// Reads `key = value` lines; blank lines and lines starting with '#' are
/// skipped. Duplicate keys are rejected with the key and both line numbers.
ConfigEntries read_config_file(const std::filesystem::path& path);
ConfigEntries parse_config_text(const std::string& text, const std::string& source = "<config>");

/// Builds a validated RunSpec. `experiment` and `model` are required; every
/// other key defaults per experiment and model. Keys that do not apply to
/// the chosen experiment/model are rejected.
RunSpec parse_run_spec(const ConfigEntries& entries);

/// Every config key, in echo order.
const std::vector<std::string>& config_keys();
/// Resolved `key=value` lines for the keys that apply to this run (without
/// `out`); feeding them back to parse_run_spec gives the same RunSpec.
std::string echo(const RunSpec& spec);

}  // namespace vkr
