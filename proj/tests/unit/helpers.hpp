#pragma once

#include <cstdint>
#include <random>

#include "posemb/rng.hpp"
#include "posemb/tensor.hpp"

namespace testing {

inline posemb::Tensor random_tensor(posemb::Shape shape, posemb::Rng& rng, double scale = 1.0) {
  posemb::Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

inline double max_abs_diff(const posemb::Tensor& a, const posemb::Tensor& b) { return posemb::max_abs_diff(a, b); }

}  // namespace testing
