#include "vaekrnet/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace vkr {

namespace {

double evaluate(const LossFn& fn) {
  Tape tape;
  const Var loss = fn(tape);
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: loss is not finite");
  return v;
}

}  // namespace

std::vector<Tensor> finite_difference_gradient(const LossFn& fn, const ParameterList& params, double h) {
  std::vector<Tensor> out;
  for (Parameter* p : params) {
    Tensor g(p->value.shape(), 0.0);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate(fn);
      p->value[i] = saved - h;
      const double down = evaluate(fn);
      p->value[i] = saved;
      g[i] = (up - down) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

GradCheckReport grad_check_report(const LossFn& fn, const ParameterList& params, double h) {
  Gradients ad;
  {
    Tape tape;
    const Var loss = fn(tape);
    ad = tape.backward(loss);
  }
  const std::vector<Tensor> fd = finite_difference_gradient(fn, params, h);
  GradCheckReport report;
  double max_fd = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor a = ad.at(*params[k]);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double err = std::abs(a[i] - fd[k][i]);
      report.max_relative_error = std::max(report.max_relative_error, err / (std::abs(fd[k][i]) + 1e-12));
      report.max_abs_error = std::max(report.max_abs_error, err);
      max_fd = std::max(max_fd, std::abs(fd[k][i]));
      ++report.entries;
    }
  }
  report.normwise_relative_error = report.max_abs_error / (max_fd + 1e-12);
  return report;
}

double grad_check(const LossFn& fn, const ParameterList& params, double h) {
  return grad_check_report(fn, params, h).max_relative_error;
}

}  // namespace vkr
