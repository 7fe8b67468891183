#pragma once

#include <string>
#include <vector>

#include "vaekrnet/numerics/autodiff.hpp"
#include "vaekrnet/numerics/rng.hpp"

namespace vkr {

/// Fully connected tanh network. Each hidden layer is affine -> tanh ->
/// trainable per-unit scale and shift; the output layer is affine.
///
/// Weights start i.i.d. N(0, 1/fan_in), biases at zero, hidden scale 1 and
/// shift 0. With `zero_output` the output layer starts at exactly zero.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<std::size_t> widths, Rng& rng, bool zero_output = false,
      const std::string& name = "mlp");

  /// Batched forward: (M x in) -> (M x out).
  Var forward(Tape& tape, const Var& input) const;
  /// Single input vector convenience.
  std::vector<double> forward(std::span<const double> input) const;

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_width() const { return widths_.front(); }
  std::size_t output_width() const { return widths_.back(); }

  ParameterList parameters();
  ConstParameterList parameters() const;

  /// Direct access for hand-built tests: layer l weight is (in x out).
  Parameter& weight(std::size_t layer) { return layers_[layer].weight; }
  Parameter& bias(std::size_t layer) { return layers_[layer].bias; }
  Parameter& hidden_scale(std::size_t layer) { return layers_[layer].scale; }
  Parameter& hidden_shift(std::size_t layer) { return layers_[layer].shift; }
  std::size_t layer_count() const { return layers_.size(); }

 private:
  struct Layer {
    Parameter weight;
    Parameter bias;
    Parameter scale;  // empty for the output layer
    Parameter shift;
  };

  std::vector<std::size_t> widths_;
  std::vector<Layer> layers_;
};

}  // namespace vkr
