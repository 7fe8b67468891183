#pragma once

#include <memory>
#include <string>
#include <vector>

#include "vaekrnet/flow/layers.hpp"
#include "vaekrnet/io/manifest.hpp"

namespace vkr {

struct KRnetConfig {
  std::size_t dim = 1;
  /// K: number of entries in the active-count schedule.
  std::size_t blocks = 1;
  /// L: scale-bias + coupling pairs per outer stage.
  std::size_t depth = 1;
  /// N_L: hidden width of the coupling networks.
  std::size_t hidden = 24;
  /// Active dimension counts, strictly decreasing from `dim`; one per block.
  std::vector<std::size_t> schedule;
  bool rotation = false;
  bool nonlinear = false;
  double nonlinear_cutoff = 50.0;
  std::size_t nonlinear_bins = 32;
  double alpha = 0.6;
};

/// counts_i = n - round(i n / K) for i = 0..K-1.
std::vector<std::size_t> even_schedule(std::size_t n, std::size_t blocks);
/// Config with the even schedule filled in.
KRnetConfig make_krnet_config(std::size_t n, std::size_t blocks, std::size_t depth, std::size_t hidden);
/// Throws std::invalid_argument describing the first violated constraint.
void validate(const KRnetConfig& config);

/// Block-triangular flow y -> z built from K - 1 outer stages (a single
/// stage when K = 1). Stage s transforms the first schedule[s] columns with
/// an optional rotation, L scale-bias/coupling pairs with alternating
/// parity, and an optional nonlinear layer on the columns about to be
/// frozen; columns beyond schedule[s+1] are never touched again. A final
/// optional nonlinear layer acts on the columns still active at the end.
class KRnet {
 public:
  KRnet(const KRnetConfig& config, Rng& rng, const std::string& name = "krnet");
  KRnet(const KRnet& other);
  KRnet& operator=(const KRnet& other);
  KRnet(KRnet&&) noexcept = default;
  KRnet& operator=(KRnet&&) noexcept = default;

  const KRnetConfig& config() const { return config_; }
  std::size_t dim() const { return config_.dim; }
  std::size_t stage_count() const { return stage_end_.size(); }
  std::size_t layer_count() const { return steps_.size(); }
  const FlowLayer& layer(std::size_t i) const { return *steps_[i].layer; }
  FlowLayer& layer(std::size_t i) { return *steps_[i].layer; }
  std::size_t layer_offset(std::size_t i) const { return steps_[i].offset; }

  /// logdet is M x 1.
  FlowResult forward(Tape& tape, const Var& y) const;
  /// y = f^-1(z); logdet is log|det dy/dz|, M x 1.
  FlowResult inverse(Tape& tape, const Var& z) const;
  /// Row-wise log p_G(f(y)) + log|det grad f(y)|.
  Var log_pdf(Tape& tape, const Var& y) const;

  /// Evaluation without gradients, processed in row chunks.
  FlowValues forward(const Tensor& y) const;
  FlowValues inverse(const Tensor& z) const;
  Tensor log_pdf(const Tensor& y) const;
  /// Rows f^-1(z) with z ~ N(0, I).
  Tensor sample(std::size_t count, Rng& rng) const;

  /// Runs stages [first, last) on y; used to probe the triangular structure.
  Tensor forward_stages(const Tensor& y, std::size_t first, std::size_t last) const;

  /// Sets every uninitialized scale-bias layer from the batch as it reaches
  /// the layer; already initialized layers are left alone.
  void initialize(const Tensor& batch);
  /// Sets every uninitialized scale-bias layer to the identity.
  void initialize_identity();
  bool initialized() const;

  ParameterList parameters();
  ConstParameterList parameters() const;

  /// Writes config keys under `prefix` and appends the parameters.
  void save(Manifest& manifest, const std::string& prefix = "") const;
  static KRnetConfig config_from(const Manifest& manifest, const std::string& prefix = "");
  /// Restores parameters and initialization flags written by save.
  void load(const Manifest& manifest, std::size_t& cursor, const std::string& prefix = "");

 private:
  struct Step {
    FlowLayerPtr layer;
    std::size_t offset = 0;
  };

  FlowResult apply(Tape& tape, const Var& in, std::size_t step, bool inverse) const;
  FlowResult run(Tape& tape, const Var& in, std::size_t first, std::size_t last, bool inverse) const;

  KRnetConfig config_;
  std::vector<Step> steps_;
  /// Index one past the last layer of each stage.
  std::vector<std::size_t> stage_end_;
};

}  // namespace vkr
