#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "posemb/errors.hpp"
#include "posemb/tensor.hpp"

namespace posemb {

// The finite-difference oracle saw a non-finite function value.
class OracleError : public Error {
 public:
  OracleError(std::size_t element, const std::string& what)
      : Error("finite-difference oracle failed at element " + std::to_string(element) + ": " + what),
        element_(element) {}
  std::size_t element() const noexcept { return element_; }

 private:
  std::size_t element_;
};

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every element of p.
///
/// `f` must read `p` (it is perturbed in place and restored afterwards) and be
/// deterministic.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor& p, double step = 1e-5);
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& p, double step = 1e-5);

struct GradComparison {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t count = 0;

  void merge(const GradComparison& other);
};

// Relative error per element is |a - n| / max(|a|, |n|, floor); the floor
// keeps round-off on vanishing gradients from dominating.
inline constexpr double kGradientFloor = 1e-6;

GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric,
                                 double floor = kGradientFloor);

}  // namespace posemb
