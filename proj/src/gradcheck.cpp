#include "dmix/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dmix {

GradCheckReport grad_check_report(const std::function<Tensor()>& loss_fn,
                                  std::span<Parameter* const> params, double epsilon) {
  if (epsilon < 1e-6 || epsilon > 1e-3) {
    throw std::invalid_argument("grad_check: epsilon must lie in [1e-6, 1e-3]");
  }
  zero_grads(params);
  const Tensor loss = loss_fn();
  const double base = loss.item();
  if (loss_fn().item() != base) throw GradCheckError("grad_check: loss function is not deterministic");
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    if (p->value.has_grad()) {
      analytic.emplace_back(p->value.grad().begin(), p->value.grad().end());
    } else {
      analytic.emplace_back(p->value.size(), 0.0);
    }
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k]->value.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + epsilon;
      const double up = loss_fn().item();
      values[i] = saved - epsilon;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = params[k]->name;
        report.worst_index = i;
      }
    }
  }
  zero_grads(params);
  return report;
}

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter* const> params,
                  double epsilon) {
  return grad_check_report(loss_fn, params, epsilon).max_relative_error;
}

}  // namespace dmix
