#include <stdexcept>

#include "vaekrnet/flow/layers.hpp"

namespace vkr {

using namespace ops;

FlowLayer::FlowLayer(std::size_t width) : width_(width) {
  if (width == 0) throw std::invalid_argument("flow layer: width must be positive");
}

ConstParameterList FlowLayer::parameters() const {
  ConstParameterList out;
  for (Parameter* p : const_cast<FlowLayer*>(this)->parameters()) out.push_back(p);
  return out;
}

FlowResult FlowLayer::apply(Tape& tape, const Var& in, bool inverse) const {
  if (in.cols() < width_) {
    throw std::invalid_argument(kind() + ": input has " + std::to_string(in.cols()) +
                                " columns, layer acts on " + std::to_string(width_));
  }
  if (in.cols() == width_) return inverse ? inverse_active(tape, in) : forward_active(tape, in);
  const Var head = slice_cols(in, 0, width_);
  const Var tail = slice_cols(in, width_, in.cols() - width_);
  FlowResult r = inverse ? inverse_active(tape, head) : forward_active(tape, head);
  r.out = concat_cols({r.out, tail});
  return r;
}

FlowResult FlowLayer::forward(Tape& tape, const Var& y) const { return apply(tape, y, false); }
FlowResult FlowLayer::inverse(Tape& tape, const Var& z) const { return apply(tape, z, true); }

namespace {
FlowValues to_values(const FlowResult& r) {
  FlowValues v{r.out.value(), Tensor::matrix(r.out.rows(), 1)};
  const Tensor& ld = r.logdet.value();
  for (std::size_t i = 0; i < v.logdet.size(); ++i) v.logdet[i] = ld.size() == 1 ? ld[0] : ld[i];
  return v;
}
}  // namespace

FlowValues FlowLayer::forward(const Tensor& y) const {
  Tape tape;
  return to_values(forward(tape, tape.constant(y)));
}

FlowValues FlowLayer::inverse(const Tensor& z) const {
  Tape tape;
  return to_values(inverse(tape, tape.constant(z)));
}

SqueezeMask::SqueezeMask(std::size_t n_, std::size_t k_) : n(n_), k(k_) {
  if (k < 1 || k > n) {
    throw std::invalid_argument("squeeze mask: active count " + std::to_string(k) +
                                " outside [1, " + std::to_string(n) + "]");
  }
}

std::pair<Tensor, Tensor> squeeze_split(const SqueezeMask& mask, const Tensor& y) {
  if (y.cols() != mask.n) throw std::invalid_argument("squeeze_split: length mismatch");
  const std::size_t rows = y.rows();
  Tensor active = Tensor::matrix(rows, mask.k);
  Tensor frozen = Tensor::matrix(rows, mask.n - mask.k);
  active.matrix() = y.matrix().leftCols(static_cast<Eigen::Index>(mask.k));
  frozen.matrix() = y.matrix().rightCols(static_cast<Eigen::Index>(mask.n - mask.k));
  return {std::move(active), std::move(frozen)};
}

Tensor squeeze_join(const SqueezeMask& mask, const Tensor& active, const Tensor& frozen) {
  if (active.cols() != mask.k || frozen.cols() != mask.n - mask.k || active.rows() != frozen.rows()) {
    throw std::invalid_argument("squeeze_join: shape mismatch");
  }
  Tensor y = Tensor::matrix(active.rows(), mask.n);
  y.matrix().leftCols(static_cast<Eigen::Index>(mask.k)) = active.matrix();
  y.matrix().rightCols(static_cast<Eigen::Index>(mask.n - mask.k)) = frozen.matrix();
  return y;
}

std::pair<Var, Var> squeeze_split(const SqueezeMask& mask, const Var& y) {
  if (y.cols() != mask.n) throw std::invalid_argument("squeeze_split: length mismatch");
  return {slice_cols(y, 0, mask.k), slice_cols(y, mask.k, mask.n - mask.k)};
}

Var squeeze_join(const Var& active, const Var& frozen) { return concat_cols({active, frozen}); }

}  // namespace vkr
