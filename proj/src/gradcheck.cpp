#include "posemb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace posemb {

Tensor finite_diff_grad(const std::function<double()>& f, Tensor& p, double step) {
  if (!(step > 0.0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double up = f();
    p[i] = saved - step;
    const double down = f();
    p[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw OracleError(i, "f(p+h)=" + std::to_string(up) + ", f(p-h)=" + std::to_string(down));
    }
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& p, double step) {
  Tensor work = p;
  return finite_diff_grad([&] { return f(work); }, work, step);
}

void GradComparison::merge(const GradComparison& other) {
  if (other.max_rel_error > max_rel_error) {
    max_rel_error = other.max_rel_error;
    worst_index = other.worst_index;
  }
  max_abs_error = std::max(max_abs_error, other.max_abs_error);
  count += other.count;
}

GradComparison compare_gradients(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw DimensionError("compare_gradients: length mismatch");
  GradComparison out;
  out.count = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    const double rel = diff / denom;
    out.max_abs_error = std::max(out.max_abs_error, diff);
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = i;
    }
  }
  return out;
}

}  // namespace posemb
