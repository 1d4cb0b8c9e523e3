#include "posemb/adam.hpp"

#include <algorithm>
#include <cmath>

#include "posemb/errors.hpp"

namespace posemb {

void AdamConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("adam epsilon must be positive");
  if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("warmup fraction must lie in [0, 1)");
  if (max_grad_norm < 0) throw ConfigError("max_grad_norm must be non-negative");
}

double scheduled_rate(const AdamConfig& config, std::int64_t step, std::int64_t total_steps) {
  if (step < 1 || total_steps < 1) throw ContractError("schedule: steps count from 1");
  const auto warmup = static_cast<std::int64_t>(std::llround(config.warmup_fraction * static_cast<double>(total_steps)));
  if (step <= warmup) return config.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  const auto remaining = std::max<std::int64_t>(total_steps - step + 1, 1);
  return config.learning_rate * static_cast<double>(remaining) / static_cast<double>(total_steps - warmup);
}

double gradient_norm(std::span<Tensor* const> params) {
  double total = 0;
  for (const Tensor* p : params) {
    if (!p->requires_grad()) continue;
    for (double g : p->grad()) total += g * g;
  }
  return std::sqrt(total);
}

void adam_step(std::span<Tensor* const> params, AdamState& state, const AdamConfig& config, double lr,
               std::span<const std::string> names) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->size(), 0.0);
      state.v[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i]->size()) throw DimensionError("adam: moment shape mismatch");
    if (!params[i]->requires_grad()) continue;
    for (double g : params[i]->grad()) {
      if (!std::isfinite(g)) {
        const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
        throw NonFiniteError("gradient of " + name);
      }
    }
  }

  double clip = 1.0;
  if (config.max_grad_norm > 0) {
    const double norm = gradient_norm(params);
    if (norm > config.max_grad_norm) clip = config.max_grad_norm / norm;
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.requires_grad()) continue;
    auto g = p.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    double* w = p.data();
    for (std::size_t e = 0; e < p.size(); ++e) {
      const double ge = g[e] * clip;
      m[e] = config.beta1 * m[e] + (1.0 - config.beta1) * ge;
      v[e] = config.beta2 * v[e] + (1.0 - config.beta2) * ge * ge;
      w[e] -= lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + config.epsilon);
    }
  }
}

std::vector<Tensor*> parameter_tensors(ParameterSet& params) {
  std::vector<Tensor*> out;
  out.reserve(params.size());
  for (auto& p : params) out.push_back(&p.tensor);
  return out;
}

std::vector<std::string> parameter_names(const ParameterSet& params) {
  std::vector<std::string> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.name);
  return out;
}

}  // namespace posemb
