#pragma once

#include <functional>
#include <span>
#include <stdexcept>

#include "dmix/optim.hpp"

namespace dmix {

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares the tape gradient of loss_fn against central differences for every
// element of params. Relative error uses max(|analytic|, |numeric|, 1e-8) as
// the denominator. Throws GradCheckError if two evaluations at the same point
// disagree, and std::invalid_argument if epsilon is outside [1e-6, 1e-3].
GradCheckReport grad_check_report(const std::function<Tensor()>& loss_fn,
                                  std::span<Parameter* const> params, double epsilon);

double grad_check(const std::function<Tensor()>& loss_fn, std::span<Parameter* const> params,
                  double epsilon);

}  // namespace dmix
