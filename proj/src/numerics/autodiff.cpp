#include "vaekrnet/numerics/autodiff.hpp"

#include <atomic>
#include <cmath>

namespace vkr {

namespace {
std::atomic<ParamId> next_param_id{1};
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), id(next_param_id.fetch_add(1)) {}

const Tensor& Var::value() const {
  return tape_->value(index_);
}

void Gradients::accumulate(ParamId id, const Tensor& grad) {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    grads_.emplace(id, grad);
    return;
  }
  if (it->second.shape() != grad.shape()) {
    throw std::invalid_argument("Gradients: shape mismatch for parameter");
  }
  it->second.matrix() += grad.matrix();
}

Tensor Gradients::at(const Parameter& p) const {
  auto it = grads_.find(p.id);
  if (it == grads_.end()) return Tensor(p.value.shape(), 0.0);
  return it->second;
}

bool Gradients::all_finite() const {
  for (const auto& [id, g] : grads_) {
    if (!g.all_finite()) return false;
  }
  return true;
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false, 0});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(p.id); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, {}, true, true, p.id});
  const int index = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(p.id, index);
  return Var(this, index);
}

bool Tape::requires_grad(const Var& v) const {
  return nodes_[static_cast<std::size_t>(v.index())].requires_grad;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::invalid_argument("Tape: input recorded on another tape");
    node.inputs.push_back(in.index());
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Gradients Tape::backward(const Var& loss) {
  if (!loss.valid() || &loss.tape() != this) {
    throw std::invalid_argument("backward: loss is not recorded on this tape");
  }
  const Tensor& lv = loss.value();
  if (lv.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_string(lv.shape()));
  }
  if (!std::isfinite(lv[0])) throw NonFiniteError("backward: loss is not finite");

  const std::size_t root = static_cast<std::size_t>(loss.index());
  std::vector<Tensor> grads(root + 1);
  std::vector<char> has_grad(root + 1, 0);
  grads[root] = Tensor(lv.shape(), 1.0);
  has_grad[root] = 1;

  Gradients result;
  std::vector<Tensor*> in_grads;
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!has_grad[i]) continue;
    Node& node = nodes_[i];
    if (node.is_param) {
      result.accumulate(node.param_id, grads[i]);
      continue;
    }
    if (!node.requires_grad || !node.backward) continue;
    in_grads.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto j = static_cast<std::size_t>(node.inputs[k]);
      if (!nodes_[j].requires_grad) continue;
      if (!has_grad[j]) {
        grads[j] = Tensor(nodes_[j].value.shape(), 0.0);
        has_grad[j] = 1;
      }
      in_grads[k] = &grads[j];
    }
    node.backward(node.value, grads[i], in_grads);
    // Intermediate gradients are no longer needed once propagated.
    grads[i] = Tensor();
  }
  // Parameters that were registered but never reached still get a zero entry.
  for (const auto& [id, index] : param_nodes_) {
    if (!result.contains(id)) {
      result.accumulate(id, Tensor(nodes_[static_cast<std::size_t>(index)].value.shape(), 0.0));
    }
  }
  return result;
}

std::size_t parameter_count(const ConstParameterList& params) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += p->value.size();
  return total;
}

}  // namespace vkr
