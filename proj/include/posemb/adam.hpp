#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "posemb/encoder.hpp"
#include "posemb/tensor.hpp"

namespace posemb {

struct AdamConfig {
  double learning_rate = 1e-3;  // peak
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double warmup_fraction = 0.1;
  double max_grad_norm = 1.0;  // 0 disables clipping

  void validate() const;
};

// Linear warmup over the first warmup_fraction of `total_steps`, then linear
// decay. `step` counts from 1.
double scheduled_rate(const AdamConfig& config, std::int64_t step, std::int64_t total_steps);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

// L2 norm over all gradients.
double gradient_norm(std::span<Tensor* const> params);

// One Adam update with bias correction at learning rate `lr`. Throws
// NonFiniteError naming the parameter when any gradient is NaN/Inf; the
// parameters and state are then left untouched.
void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& config, double lr,
               std::span<const std::string> names = {});

std::vector<Tensor*> parameter_tensors(ParameterSet& params);
std::vector<std::string> parameter_names(const ParameterSet& params);

}  // namespace posemb
