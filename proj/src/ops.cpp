#include "posemb/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "posemb/errors.hpp"

namespace posemb {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

MatMap as_matrix(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_matrix(const char* op, const Var& v) {
  if (v.value().rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(v.shape()));
  }
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

Mask Mask::key_padding(std::span<const std::uint8_t> key_valid, std::size_t rows) {
  Mask m;
  m.rows = rows;
  m.cols = key_valid.size();
  m.allowed.resize(rows * m.cols);
  for (std::size_t r = 0; r < rows; ++r) std::copy(key_valid.begin(), key_valid.end(), m.allowed.begin() + r * m.cols);
  return m;
}

Var matmul(Var a, Var b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + shape_string(a.shape()) + " @ " + shape_string(b.shape()));
  }
  Tensor out({a.rows(), b.cols()});
  as_matrix(out.values(), out.rows(), out.cols()).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    auto g = ConstMatMap(tape.grad_of(self).data(), static_cast<Eigen::Index>(a.rows()),
                         static_cast<Eigen::Index>(b.cols()));
    if (tape.needs_grad(a)) as_matrix(tape.grad_sink(a), a.rows(), a.cols()).noalias() += g * as_matrix(b.value()).transpose();
    if (tape.needs_grad(b)) as_matrix(tape.grad_sink(b), b.rows(), b.cols()).noalias() += as_matrix(a.value()).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  require_matrix("matmul_nt", a);
  require_matrix("matmul_nt", b);
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_string(a.shape()) + " @ " +
                         shape_string(b.shape()) + "^T");
  }
  Tensor out({a.rows(), b.rows()});
  as_matrix(out.values(), out.rows(), out.cols()).noalias() = as_matrix(a.value()) * as_matrix(b.value()).transpose();
  return a.tape().record("matmul_nt", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    auto g = ConstMatMap(tape.grad_of(self).data(), static_cast<Eigen::Index>(a.rows()),
                         static_cast<Eigen::Index>(b.rows()));
    if (tape.needs_grad(a)) as_matrix(tape.grad_sink(a), a.rows(), a.cols()).noalias() += g * as_matrix(b.value());
    if (tape.needs_grad(b)) as_matrix(tape.grad_sink(b), b.rows(), b.cols()).noalias() += g.transpose() * as_matrix(a.value());
  });
}

Var transpose(Var a) {
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({c, r});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = x.at(i, j);
  return a.tape().record("transpose", std::move(out), {a}, [a, r, c](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto da = tape.grad_sink(a);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    for (const Var& p : {a, b}) {
      if (!tape.needs_grad(p)) continue;
      auto d = tape.grad_sink(p);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    if (tape.needs_grad(a)) {
      auto d = tape.grad_sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tape.needs_grad(b)) {
      auto d = tape.grad_sink(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    if (tape.needs_grad(a)) {
      auto d = tape.grad_sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * b.value()[i];
    }
    if (tape.needs_grad(b)) {
      auto d = tape.grad_sink(b);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * a.value()[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(a);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
  });
}

Var add_bias(Var a, Var bias) {
  require_matrix("add_bias", a);
  if (bias.value().size() != a.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not fit " + shape_string(a.shape()));
  }
  Tensor out = a.value();
  const std::size_t r = a.rows(), c = a.cols();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += bias.value()[j];
  return a.tape().record("add_bias", std::move(out), {a, bias}, [a, bias, r, c](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    if (tape.needs_grad(a)) {
      auto d = tape.grad_sink(a);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (tape.needs_grad(bias)) {
      auto d = tape.grad_sink(bias);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j];
    }
  });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return a.tape().record("sum", Tensor::scalar(total), {a}, [a](Tape& tape, std::size_t self) {
    const double g = tape.grad_of(self)[0];
    for (auto& d : tape.grad_sink(a)) d += g;
  });
}

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols) {
  require_matrix("slice", a);
  if (nrows == 0 || ncols == 0 || row0 + nrows > a.rows() || col0 + ncols > a.cols()) {
    throw DimensionError("slice: block out of range for " + shape_string(a.shape()));
  }
  const std::size_t c = a.cols();
  Tensor out({nrows, ncols});
  const double* src = a.value().data();
  for (std::size_t i = 0; i < nrows; ++i)
    std::copy_n(src + (row0 + i) * c + col0, ncols, out.data() + i * ncols);
  return a.tape().record("slice", std::move(out), {a}, [=](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(a);
    for (std::size_t i = 0; i < nrows; ++i)
      for (std::size_t j = 0; j < ncols; ++j) d[(row0 + i) * c + col0 + j] += g[i * ncols + j];
  });
}

Var concat_grid(std::span<const Var> blocks, std::size_t grid_rows, std::size_t grid_cols) {
  if (blocks.empty() || blocks.size() != grid_rows * grid_cols) {
    throw DimensionError("concat_grid: block count does not match grid");
  }
  std::vector<std::size_t> heights(grid_rows), widths(grid_cols);
  for (std::size_t gr = 0; gr < grid_rows; ++gr) heights[gr] = blocks[gr * grid_cols].rows();
  for (std::size_t gc = 0; gc < grid_cols; ++gc) widths[gc] = blocks[gc].cols();
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      const Var& b = blocks[gr * grid_cols + gc];
      require_matrix("concat_grid", b);
      if (b.rows() != heights[gr] || b.cols() != widths[gc]) throw DimensionError("concat_grid: ragged blocks");
    }
  }
  std::vector<std::size_t> row_off(grid_rows + 1, 0), col_off(grid_cols + 1, 0);
  for (std::size_t i = 0; i < grid_rows; ++i) row_off[i + 1] = row_off[i] + heights[i];
  for (std::size_t i = 0; i < grid_cols; ++i) col_off[i + 1] = col_off[i] + widths[i];
  const std::size_t total_cols = col_off.back();
  Tensor out({row_off.back(), total_cols});
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      const Tensor& b = blocks[gr * grid_cols + gc].value();
      for (std::size_t i = 0; i < b.rows(); ++i)
        std::copy_n(b.data() + i * b.cols(), b.cols(), out.data() + (row_off[gr] + i) * total_cols + col_off[gc]);
    }
  }
  std::vector<Var> parents(blocks.begin(), blocks.end());
  return blocks[0].tape().record(
      "concat", std::move(out), parents, [parents, row_off, col_off, grid_cols, total_cols](Tape& tape, std::size_t self) {
        auto g = tape.grad_of(self);
        for (std::size_t k = 0; k < parents.size(); ++k) {
          const Var& b = parents[k];
          if (!tape.needs_grad(b)) continue;
          const std::size_t gr = k / grid_cols, gc = k % grid_cols;
          auto d = tape.grad_sink(b);
          const std::size_t w = b.cols();
          for (std::size_t i = 0; i < b.rows(); ++i) {
            const double* src = g.data() + (row_off[gr] + i) * total_cols + col_off[gc];
            for (std::size_t j = 0; j < w; ++j) d[i * w + j] += src[j];
          }
        }
      });
}

Var concat_cols(std::span<const Var> blocks) { return concat_grid(blocks, 1, blocks.size()); }

Var concat_rows(std::span<const Var> blocks) { return concat_grid(blocks, blocks.size(), 1); }

Var gather_rows(Var table, std::span<const int> ids) {
  require_matrix("gather_rows", table);
  if (ids.empty()) throw DimensionError("gather_rows: no ids");
  const std::size_t c = table.cols();
  Tensor out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= table.rows()) {
      throw InputError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.value().data() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return table.tape().record("gather_rows", std::move(out), {table}, [table, idx, c](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) d[static_cast<std::size_t>(idx[i]) * c + j] += g[i * c + j];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  require_matrix("layer_norm", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.value().size() != c || bias.value().size() != c) throw DimensionError("layer_norm: gain/bias width");
  Tensor out({r, c});
  std::vector<double> xhat(r * c), inv_std(r);
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double dlt = xv[i * c + j] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mean) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gain.value()[j] + bias.value()[j];
    }
  }
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tape, std::size_t self) {
        auto g = tape.grad_of(self);
        if (tape.needs_grad(gain)) {
          auto d = tape.grad_sink(gain);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j] * xhat[i * c + j];
        }
        if (tape.needs_grad(bias)) {
          auto d = tape.grad_sink(bias);
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) d[j] += g[i * c + j];
        }
        if (tape.needs_grad(x)) {
          auto d = tape.grad_sink(x);
          const auto& w = gain.value();
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g[i * c + j] * w[j];
              mean_g += gh;
              mean_gx += gh * xhat[i * c + j];
            }
            mean_g *= inv_c;
            mean_gx *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g[i * c + j] * w[j];
              d[i * c + j] += inv_std[i] * (gh - mean_g - xhat[i * c + j] * mean_gx);
            }
          }
        }
      });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  return x.tape().record("gelu", std::move(out), {x}, [x](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(x);
    const auto& xv = x.value();
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Var softmax_rows(Var x, const Mask* mask) {
  require_matrix("softmax_rows", x);
  const std::size_t r = x.rows(), c = x.cols();
  if (mask && (mask->rows != r || mask->cols != c)) throw DimensionError("softmax_rows: mask shape");
  Tensor out({r, c});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (!mask || (*mask)(i, j)) mx = std::max(mx, xv[i * c + j]);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw ContractError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = (!mask || (*mask)(i, j)) ? std::exp(xv[i * c + j] - mx) : 0.0;
      out[i * c + j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= total;
  }
  std::vector<double> yv(out.values().begin(), out.values().end());
  return x.tape().record("softmax_rows", std::move(out), {x}, [x, r, c, yv = std::move(yv)](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(x);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * yv[i * c + j];
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += yv[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

Var cross_entropy_from_logits(Var logits, std::span<const int> targets) {
  require_matrix("cross_entropy", logits);
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw DimensionError("cross_entropy: one target per row required");
  std::size_t count = 0;
  for (int t : targets) {
    if (t >= static_cast<int>(c)) throw InputError("cross_entropy: target " + std::to_string(t) + " out of range");
    if (t >= 0) ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: no target positions");
  const Tensor& xv = logits.value();
  std::vector<double> probs(r * c, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] < 0) continue;
    double mx = xv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, xv[i * c + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(xv[i * c + j] - mx);
      total += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= total;
    loss -= xv[i * c + static_cast<std::size_t>(targets[i])] - mx - std::log(total);
  }
  const double inv_count = 1.0 / static_cast<double>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  return logits.tape().record(
      "cross_entropy", Tensor::scalar(loss * inv_count), {logits},
      [logits, tgt = std::move(tgt), probs = std::move(probs), r, c, inv_count](Tape& tape, std::size_t self) {
        const double g = tape.grad_of(self)[0] * inv_count;
        auto d = tape.grad_sink(logits);
        for (std::size_t i = 0; i < r; ++i) {
          if (tgt[i] < 0) continue;
          for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g * probs[i * c + j];
          d[i * c + static_cast<std::size_t>(tgt[i])] -= g;
        }
      });
}

Var dropout(Var x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const double factor = 1.0 / (1.0 - rate);
  std::vector<double> gate(x.value().size());
  for (auto& g : gate) g = keep(rng) ? factor : 0.0;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= gate[i];
  return x.tape().record("dropout", std::move(out), {x}, [x, gate = std::move(gate)](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    auto d = tape.grad_sink(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * gate[i];
  });
}

}  // namespace posemb
