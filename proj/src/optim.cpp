#include "dmix/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace dmix {

Parameter::Parameter(std::string n, Tensor v, bool f)
    : name(std::move(n)), value(std::move(v)), frozen(f) {
  value.set_requires_grad(!frozen);
}

void Parameter::set_frozen(bool on) {
  frozen = on;
  value.set_requires_grad(!on);
}

Parameter Parameter::clone() const { return Parameter(name, value.clone(!frozen), frozen); }

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(data));
}

double global_grad_norm(std::span<Parameter* const> params) {
  double total = 0.0;
  for (const Parameter* p : params) {
    if (p->frozen || !p->value.has_grad()) continue;
    for (double g : p->value.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_gradients(std::span<Parameter* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (Parameter* p : params) {
    if (p->frozen || !p->value.has_grad()) continue;
    for (double& g : p->value.mutable_grad()) g *= factor;
  }
  return factor;
}

void adamw_step(OptimizerState& state, std::span<Parameter* const> params) {
  const AdamWConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);

  for (Parameter* p : params) {
    if (p->frozen || !p->value.has_grad()) continue;
    auto values = p->value.mutable_data();
    const auto grads = p->value.grad();
    auto& m = state.moments[p->name];
    // Parameters that grew (new vocabulary rows, new router rows) get zero moments for the tail.
    m.first.resize(values.size(), 0.0);
    m.second.resize(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grads[i];
      m.first[i] = c.beta1 * m.first[i] + (1.0 - c.beta1) * g;
      m.second[i] = c.beta2 * m.second[i] + (1.0 - c.beta2) * g * g;
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      values[i] -= c.learning_rate * c.weight_decay * values[i];
      values[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->value.zero_grad();
}

}  // namespace dmix
