#include "vaekrnet/numerics/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace vkr {

void Adam::step(const ParameterList& params, const Gradients& grads) {
  for (const Parameter* p : params) {
    if (grads.contains(p->id) && grads.map().at(p->id).shape() != p->value.shape()) {
      throw std::invalid_argument("adam: gradient shape " +
                                  shape_string(grads.map().at(p->id).shape()) +
                                  " does not match parameter '" + p->name + "' " +
                                  shape_string(p->value.shape()));
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (Parameter* p : params) {
    auto [it, inserted] = moments_.try_emplace(p->id);
    Moments& m = it->second;
    if (inserted) {
      m.first = Tensor(p->value.shape(), 0.0);
      m.second = Tensor(p->value.shape(), 0.0);
    }
    const auto found = grads.map().find(p->id);
    if (found == grads.map().end()) {
      // Zero gradient: moments decay, the update uses the decayed moments.
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        m.first[i] *= config_.beta1;
        m.second[i] *= config_.beta2;
        p->value[i] -= config_.learning_rate * (m.first[i] / c1) /
                       (std::sqrt(m.second[i] / c2) + config_.epsilon);
      }
      continue;
    }
    const Tensor& g = found->second;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      m.first[i] = config_.beta1 * m.first[i] + (1.0 - config_.beta1) * g[i];
      m.second[i] = config_.beta2 * m.second[i] + (1.0 - config_.beta2) * g[i] * g[i];
      p->value[i] -= config_.learning_rate * (m.first[i] / c1) /
                     (std::sqrt(m.second[i] / c2) + config_.epsilon);
    }
  }
}

}  // namespace vkr
