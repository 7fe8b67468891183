#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vaekrnet/numerics/tensor.hpp"

namespace vkr {

using ParamId = std::uint64_t;

/// A trainable leaf. Copies keep the id, so a snapshot of a model shares
/// optimizer state keys with the original.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  ParamId id = 0;
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int index) : tape_(tape), index_(index) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  int index() const { return index_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int index_ = -1;
};

/// Gradients keyed by parameter id.
class Gradients {
 public:
  void accumulate(ParamId id, const Tensor& grad);
  bool contains(ParamId id) const { return grads_.contains(id); }
  /// Gradient for `p`; zeros of p's shape when p did not reach the loss.
  Tensor at(const Parameter& p) const;
  const std::unordered_map<ParamId, Tensor>& map() const { return grads_; }
  bool all_finite() const;

 private:
  std::unordered_map<ParamId, Tensor> grads_;
};

/// Receives the node's output value, its gradient, and the (possibly null)
/// input gradient accumulators; null means that input needs no gradient.
using BackwardFn =
    std::function<void(const Tensor& out, const Tensor& out_grad, std::vector<Tensor*>& in_grads)>;

/// Define-by-run record of primitive operations. Build one per loss
/// evaluation, call backward once, discard.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; repeated calls for the same parameter return the same node.
  Var param(const Parameter& p);

  /// Records an operation. Input order must match the in_grads order handed
  /// to `backward`.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(int index) const { return nodes_[static_cast<std::size_t>(index)].value; }
  bool requires_grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a one-element loss. Throws if the loss is not a
  /// scalar, lives on another tape, or is non-finite.
  Gradients backward(const Var& loss);

 private:
  struct Node {
    Tensor value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_param = false;
    ParamId param_id = 0;
  };

  std::vector<Node> nodes_;
  std::unordered_map<ParamId, int> param_nodes_;
};

/// Collects parameter pointers from a model for optimizers and manifests.
using ParameterList = std::vector<Parameter*>;
using ConstParameterList = std::vector<const Parameter*>;

std::size_t parameter_count(const ConstParameterList& params);

}  // namespace vkr
