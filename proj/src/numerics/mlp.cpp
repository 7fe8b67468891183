#include "vaekrnet/numerics/mlp.hpp"

#include <cmath>
#include <stdexcept>

#include "vaekrnet/numerics/ops.hpp"

namespace vkr {

Mlp::Mlp(std::vector<std::size_t> widths, Rng& rng, bool zero_output, const std::string& name)
    : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    const std::size_t in = widths_[l];
    const std::size_t out = widths_[l + 1];
    const bool output_layer = l + 2 == widths_.size();
    Tensor w = Tensor::matrix(in, out);
    if (!(output_layer && zero_output) && in > 0) {
      const double scale = 1.0 / std::sqrt(static_cast<double>(in));
      for (double& v : w.values()) v = scale * rng.normal();
    }
    const std::string prefix = name + ".layer" + std::to_string(l);
    Layer layer{Parameter(prefix + ".weight", std::move(w)),
                Parameter(prefix + ".bias", Tensor::matrix(1, out)), {}, {}};
    if (!output_layer) {
      layer.scale = Parameter(prefix + ".scale", Tensor::matrix(1, out, 1.0));
      layer.shift = Parameter(prefix + ".shift", Tensor::matrix(1, out));
    }
    layers_.push_back(std::move(layer));
  }
}

Var Mlp::forward(Tape& tape, const Var& input) const {
  if (input.cols() != widths_.front()) {
    throw std::invalid_argument("Mlp: input width " + std::to_string(input.cols()) +
                                " does not match " + std::to_string(widths_.front()));
  }
  using namespace ops;
  Var h = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    h = matmul(h, tape.param(layer.weight)) + tape.param(layer.bias);
    if (l + 1 < layers_.size()) {
      h = tanh(h) * tape.param(layer.scale) + tape.param(layer.shift);
    }
  }
  return h;
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  Tape tape;
  Var x = tape.constant(Tensor::row({input.begin(), input.end()}));
  const Tensor& out = forward(tape, x).value();
  return {out.values().begin(), out.values().end()};
}

ParameterList Mlp::parameters() {
  ParameterList out;
  for (Layer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (layer.scale.value.size() > 0) {
      out.push_back(&layer.scale);
      out.push_back(&layer.shift);
    }
  }
  return out;
}

ConstParameterList Mlp::parameters() const {
  ConstParameterList out;
  for (Parameter* p : const_cast<Mlp*>(this)->parameters()) out.push_back(p);
  return out;
}

}  // namespace vkr
