#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dmix/rng.hpp"
#include "dmix/tensor.hpp"

namespace dmix {

// A named leaf tensor. Frozen parameters never require grad and are never
// touched by the optimizer.
struct Parameter {
  std::string name;
  Tensor value;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string name, Tensor value, bool frozen = false);

  void set_frozen(bool on);
  Parameter clone() const;
};

// Uniform in +-1/sqrt(fan_in).
Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 5.0;
};

struct OptimizerState {
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };

  AdamWConfig config;
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;

  explicit OptimizerState(AdamWConfig cfg = {}) : config(cfg) {}
};

// Scales every gradient by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the factor applied (1 when untouched).
double clip_gradients(std::span<Parameter* const> params, double max_norm);
double global_grad_norm(std::span<Parameter* const> params);

// One decoupled-weight-decay Adam update with bias correction. Frozen
// parameters and parameters without a gradient are skipped.
void adamw_step(OptimizerState& state, std::span<Parameter* const> params);

void zero_grads(std::span<Parameter* const> params);

}  // namespace dmix
