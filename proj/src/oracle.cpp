#include "posemb/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "posemb/errors.hpp"

namespace posemb {
namespace {

using Vec = std::vector<double>;

Vec row_times(const Tensor& x, std::size_t row, const Tensor& w) {
  const std::size_t din = w.rows(), dout = w.cols();
  Vec out(dout, 0.0);
  for (std::size_t c = 0; c < dout; ++c)
    for (std::size_t r = 0; r < din; ++r) out[c] += x.at(row, r) * w.at(r, c);
  return out;
}

Vec vec_times(const Vec& v, const Tensor& w) {
  Vec out(w.cols(), 0.0);
  for (std::size_t c = 0; c < w.cols(); ++c)
    for (std::size_t r = 0; r < w.rows(); ++r) out[c] += v[r] * w.at(r, c);
  return out;
}

Vec table_row(const Tensor& t, std::size_t r) {
  return Vec(t.data() + r * t.cols(), t.data() + (r + 1) * t.cols());
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Tensor naive_oracle(const MethodSpec& spec, const OracleInputs& in) {
  const std::size_t n = in.x.rows();
  if (n > 64) throw ContractError("naive_oracle: n must be <= 64");
  const std::size_t dz = in.wq.cols();
  const double denom = std::sqrt(static_cast<double>(spec.scaling_factor) * static_cast<double>(dz));
  const int clip = uses_vector_table(spec.kind) ? static_cast<int>((in.table.rows() - 1) / 2) : 0;
  const std::ptrdiff_t zero = static_cast<std::ptrdiff_t>((in.scalar_table.size() - 1) / 2);

  std::vector<Vec> q(n), k(n), pq(n), pk(n);
  for (std::size_t i = 0; i < n; ++i) {
    q[i] = row_times(in.x, i, in.wq);
    k[i] = row_times(in.x, i, in.wk);
    if (spec.kind == Kind::tupe) {
      pq[i] = row_times(in.positions, i, in.uq);
      pk[i] = row_times(in.positions, i, in.uk);
    }
  }

  Tensor e({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i);
      const double content = dot(q[i], k[j]);
      Vec a;
      if (clip > 0) a = table_row(in.table, static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(offset, -clip, clip) + clip));
      const double s = in.scalar_table.size() ? in.scalar_table[static_cast<std::size_t>(zero + offset)] : 0.0;

      double positional = 0.0;  // everything except content / denom
      double value = 0.0;
      switch (spec.kind) {
        case Kind::shaw:
          positional = dot(q[i], a) / denom;
          break;
        case Kind::m4:
          positional = (dot(q[i], a) + dot(k[j], a)) / denom;
          break;
        case Kind::deberta:
          positional = (dot(q[i], vec_times(a, in.wr)) + dot(k[j], vec_times(a, in.wt))) / denom;
          break;
        case Kind::m4m:
          positional = content * dot(q[i], a) * dot(k[j], a) / denom - content / denom;
          break;
        case Kind::raffel:
          positional = s / denom;
          break;
        case Kind::m2:
          positional = content * s / denom - content / denom;
          break;
        case Kind::tupe:
          positional = dot(pq[i], pk[j]) / denom + s;
          break;
        default:
          break;
      }
      if (spec.reset_cls) {
        if (i == 0) {
          positional = *in.theta1;
        } else if (j == 0) {
          positional = *in.theta2;
        }
      }
      // Multiplicative kinds are evaluated directly to stay an independent route.
      if (!spec.reset_cls && spec.kind == Kind::m4m) {
        value = content * dot(q[i], a) * dot(k[j], a) / denom;
      } else if (!spec.reset_cls && spec.kind == Kind::m2) {
        value = content * s / denom;
      } else {
        value = content / denom + positional;
      }
      e.at(i, j) = value;
    }
  }
  return e;
}

}  // namespace posemb
