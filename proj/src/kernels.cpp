#include "posemb/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eigen_view.hpp"
#include "posemb/errors.hpp"
#include "posemb/ops.hpp"

namespace posemb {

using detail::view;

namespace {

void require_qk(const char* op, const Var& q, const Var& k) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || q.shape() != k.shape()) {
    throw DimensionError(std::string(op) + ": q and k must be matching n x d_z matrices, got " +
                         shape_string(q.shape()) + " and " + shape_string(k.shape()));
  }
}

int table_clip(const char* op, const Var& table, std::size_t head_width) {
  const Tensor& t = table.value();
  if (t.rank() != 2 || t.rows() % 2 == 0 || t.cols() != head_width) {
    throw DimensionError(std::string(op) + ": relative table must be (2k+1) x " + std::to_string(head_width) +
                         ", got " + shape_string(t.shape()));
  }
  return static_cast<int>((t.rows() - 1) / 2);
}

// Index grid r(i, j) = clip(j - i, k) + k for an n x n logit matrix.
std::vector<int> clipped_index_grid(std::size_t n, int k) {
  std::vector<int> idx(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      idx[i * n + j] = clip_offset(static_cast<int>(j) - static_cast<int>(i), k) + k;
  return idx;
}

std::size_t scalar_table_length(const char* op, const Var& table, std::size_t n) {
  const std::size_t len = table.value().size();
  if (len % 2 == 0 || (len + 1) / 2 < n) {
    throw DimensionError(std::string(op) + ": scalar table of " + std::to_string(len) +
                         " entries cannot cover sequence length " + std::to_string(n));
  }
  return len;
}

}  // namespace

int clip_offset(int offset, int k) { return std::max(-k, std::min(k, offset)); }

std::size_t relative_index(int i, int j, int k) {
  if (k < 1) throw ContractError("relative_index: k must be >= 1");
  return static_cast<std::size_t>(clip_offset(j - i, k) + k);
}

double logit_denominator(int scaling_factor, std::size_t head_width) {
  return std::sqrt(static_cast<double>(scaling_factor) * static_cast<double>(head_width));
}

Var relative_vector_logits(Var q, Var k, Var query_table, Var key_table, double denom) {
  require_qk("relative_vector_logits", q, k);
  const std::size_t n = q.rows(), dz = q.cols();
  const bool has_q = query_table.valid(), has_k = key_table.valid();
  int clip = 0;
  if (has_q) clip = table_clip("relative_vector_logits", query_table, dz);
  if (has_k) {
    const int ck = table_clip("relative_vector_logits", key_table, dz);
    if (has_q && ck != clip) throw DimensionError("relative_vector_logits: query/key tables differ in size");
    clip = ck;
  }
  const std::size_t R = 2 * static_cast<std::size_t>(clip) + 1;
  const std::vector<int> idx = (has_q || has_k) ? clipped_index_grid(n, clip) : std::vector<int>{};
  const double inv = 1.0 / denom;

  Tensor out({n, n});
  auto e = view(out.values(), n, n);
  e.noalias() = view(q.value()) * view(k.value()).transpose();
  if (has_q) {
    detail::RowMat qt = view(q.value()) * view(query_table.value()).transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) e(i, j) += qt(i, idx[i * n + j]);
  }
  if (has_k) {
    detail::RowMat kt = view(k.value()) * view(key_table.value()).transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) e(i, j) += kt(j, idx[i * n + j]);
  }
  e *= inv;

  std::vector<Var> parents{q, k};
  if (has_q) parents.push_back(query_table);
  if (has_k) parents.push_back(key_table);
  return q.tape().record(
      "relative_vector_logits", std::move(out), parents,
      [=, idx = std::move(idx)](Tape& tape, std::size_t self) {
        detail::RowMat g = view(tape.grad_of(self), n, n) * inv;
        if (tape.needs_grad(q)) view(tape.grad_sink(q), n, dz).noalias() += g * view(k.value());
        if (tape.needs_grad(k)) view(tape.grad_sink(k), n, dz).noalias() += g.transpose() * view(q.value());
        if (has_q) {
          // Row-wise bucket sums: gr(i, r) = sum_j g(i, j) [r(i,j) = r].
          detail::RowMat gr = detail::RowMat::Zero(n, R);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) gr(i, idx[i * n + j]) += g(i, j);
          if (tape.needs_grad(q)) view(tape.grad_sink(q), n, dz).noalias() += gr * view(query_table.value());
          if (tape.needs_grad(query_table))
            view(tape.grad_sink(query_table), R, dz).noalias() += gr.transpose() * view(q.value());
        }
        if (has_k) {
          detail::RowMat gc = detail::RowMat::Zero(n, R);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) gc(j, idx[i * n + j]) += g(i, j);
          if (tape.needs_grad(k)) view(tape.grad_sink(k), n, dz).noalias() += gc * view(key_table.value());
          if (tape.needs_grad(key_table))
            view(tape.grad_sink(key_table), R, dz).noalias() += gc.transpose() * view(k.value());
        }
      });
}

Var relative_product_logits(Var q, Var k, Var table, double denom) {
  require_qk("relative_product_logits", q, k);
  const std::size_t n = q.rows(), dz = q.cols();
  const int clip = table_clip("relative_product_logits", table, dz);
  const std::size_t R = 2 * static_cast<std::size_t>(clip) + 1;
  const std::vector<int> idx = clipped_index_grid(n, clip);
  const double inv = 1.0 / denom;

  detail::RowMat content = view(q.value()) * view(k.value()).transpose();
  const detail::RowMat qt = view(q.value()) * view(table.value()).transpose();
  const detail::RowMat kt = view(k.value()) * view(table.value()).transpose();
  detail::RowMat qa(n, n), ka(n, n);
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      qa(i, j) = qt(i, idx[i * n + j]);
      ka(i, j) = kt(j, idx[i * n + j]);
      out.at(i, j) = content(i, j) * qa(i, j) * ka(i, j) * inv;
    }
  }
  return q.tape().record(
      "relative_product_logits", std::move(out), {q, k, table},
      [=, idx = std::move(idx), content = std::move(content), qa = std::move(qa), ka = std::move(ka)](
          Tape& tape, std::size_t self) {
        const auto gout = view(tape.grad_of(self), n, n);
        detail::RowMat g_content(n, n), gr = detail::RowMat::Zero(n, R), gc = detail::RowMat::Zero(n, R);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = gout(i, j) * inv;
            g_content(i, j) = g * qa(i, j) * ka(i, j);
            gr(i, idx[i * n + j]) += g * content(i, j) * ka(i, j);
            gc(j, idx[i * n + j]) += g * content(i, j) * qa(i, j);
          }
        }
        const auto T = view(table.value());
        if (tape.needs_grad(q)) {
          view(tape.grad_sink(q), n, dz).noalias() += g_content * view(k.value()) + gr * T;
        }
        if (tape.needs_grad(k)) {
          view(tape.grad_sink(k), n, dz).noalias() += g_content.transpose() * view(q.value()) + gc * T;
        }
        if (tape.needs_grad(table)) {
          view(tape.grad_sink(table), R, dz).noalias() +=
              gr.transpose() * view(q.value()) + gc.transpose() * view(k.value());
        }
      });
}

Var relative_scalar_logits(Var q, Var k, Var scalar_table, ScalarCombine combine, double denom) {
  require_qk("relative_scalar_logits", q, k);
  const std::size_t n = q.rows(), dz = q.cols();
  const std::size_t len = scalar_table_length("relative_scalar_logits", scalar_table, n);
  const std::size_t zero = (len - 1) / 2;
  const double inv = 1.0 / denom;
  detail::RowMat content = view(q.value()) * view(k.value()).transpose();
  const auto& w = scalar_table.value();
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a = w[zero + j - i];
      out.at(i, j) = (combine == ScalarCombine::add ? content(i, j) + a : content(i, j) * a) * inv;
    }
  }
  return q.tape().record(
      "relative_scalar_logits", std::move(out), {q, k, scalar_table},
      [=, content = std::move(content)](Tape& tape, std::size_t self) {
        const auto gout = view(tape.grad_of(self), n, n);
        const auto& wv = scalar_table.value();
        detail::RowMat g_content(n, n);
        std::span<double> dw = tape.needs_grad(scalar_table) ? tape.grad_sink(scalar_table) : std::span<double>{};
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) {
            const double g = gout(i, j) * inv;
            const std::size_t r = zero + j - i;
            if (combine == ScalarCombine::add) {
              g_content(i, j) = g;
              if (!dw.empty()) dw[r] += g;
            } else {
              g_content(i, j) = g * wv[r];
              if (!dw.empty()) dw[r] += g * content(i, j);
            }
          }
        }
        if (tape.needs_grad(q)) view(tape.grad_sink(q), n, dz).noalias() += g_content * view(k.value());
        if (tape.needs_grad(k)) view(tape.grad_sink(k), n, dz).noalias() += g_content.transpose() * view(q.value());
      });
}

Var add_relative_bias(Var v, Var scalar_table) {
  if (v.value().rank() != 2 || v.rows() != v.cols()) throw DimensionError("add_relative_bias: v must be square");
  const std::size_t n = v.rows();
  const std::size_t len = scalar_table_length("add_relative_bias", scalar_table, n);
  const std::size_t zero = (len - 1) / 2;
  Tensor out = v.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += scalar_table.value()[zero + j - i];
  return v.tape().record("add_relative_bias", std::move(out), {v, scalar_table},
                         [=](Tape& tape, std::size_t self) {
                           auto g = tape.grad_of(self);
                           if (tape.needs_grad(v)) {
                             auto d = tape.grad_sink(v);
                             for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                           }
                           if (tape.needs_grad(scalar_table)) {
                             auto d = tape.grad_sink(scalar_table);
                             for (std::size_t i = 0; i < n; ++i)
                               for (std::size_t j = 0; j < n; ++j) d[zero + j - i] += g[i * n + j];
                           }
                         });
}

Var apply_reset(Var v, const ResetParams& reset) {
  if (!reset.theta1.valid() || !reset.theta2.valid()) throw ConfigError("apply_reset: missing θ1/θ2");
  if (v.value().rank() != 2 || v.rows() != v.cols()) throw DimensionError("apply_reset: v must be square");
  const std::size_t n = v.rows();
  if (n < 2) throw InputError("apply_reset: needs at least two positions");
  if (reset.theta1.value().size() != 1 || reset.theta2.value().size() != 1) {
    throw DimensionError("apply_reset: θ1 and θ2 must be scalars");
  }
  Tensor out = v.value();
  const double t1 = reset.theta1.value()[0], t2 = reset.theta2.value()[0];
  for (std::size_t j = 0; j < n; ++j) out.at(0, j) = t1;
  for (std::size_t i = 1; i < n; ++i) out.at(i, 0) = t2;
  const Var th1 = reset.theta1, th2 = reset.theta2;
  return v.tape().record("apply_reset", std::move(out), {v, th1, th2}, [=](Tape& tape, std::size_t self) {
    auto g = tape.grad_of(self);
    if (tape.needs_grad(v)) {
      auto d = tape.grad_sink(v);
      for (std::size_t i = 1; i < n; ++i)
        for (std::size_t j = 1; j < n; ++j) d[i * n + j] += g[i * n + j];
    }
    if (tape.needs_grad(th1)) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g[j];
      tape.grad_sink(th1)[0] += acc;
    }
    if (tape.needs_grad(th2)) {
      double acc = 0.0;
      for (std::size_t i = 1; i < n; ++i) acc += g[i * n];
      tape.grad_sink(th2)[0] += acc;
    }
  });
}

namespace {

void require_bound(const Var& v, const char* what, Kind kind) {
  if (!v.valid()) throw ConfigError(std::string(kind_name(kind)) + " logits need " + what);
}

Var content_logits(Var q, Var k, double denom) { return relative_vector_logits(q, k, Var{}, Var{}, denom); }

Var tupe_positional(Var q, const PositionTerms& t, double denom, Kind kind) {
  require_bound(t.positions, "absolute positions p", kind);
  require_bound(t.pos_query, "U^Q", kind);
  require_bound(t.pos_key, "U^K", kind);
  require_bound(t.scalar_table, "a scalar relative table", kind);
  const std::size_t n = q.rows();
  if (t.positions.rows() < n || t.positions.cols() != q.cols()) {
    throw DimensionError("tupe: position table " + shape_string(t.positions.shape()) + " cannot cover " +
                         std::to_string(n) + " positions of width " + std::to_string(q.cols()));
  }
  Var p = t.positions.rows() == n ? t.positions : slice(t.positions, 0, n, 0, q.cols());
  Var pq = matmul(p, t.pos_query);
  Var pk = matmul(p, t.pos_key);
  return add_relative_bias(content_logits(pq, pk, denom), t.scalar_table);
}

}  // namespace

Var head_logits(const MethodSpec& spec, Var q, Var k, const PositionTerms& t) {
  const double denom = logit_denominator(spec.scaling_factor, q.cols());
  if (spec.reset_cls && !t.reset) throw ConfigError("reset_cls requested without θ1/θ2 parameters");

  if (spec.kind == Kind::tupe) {
    Var v = tupe_positional(q, t, denom, spec.kind);
    if (spec.reset_cls) v = apply_reset(v, *t.reset);
    return add(content_logits(q, k, denom), v);
  }

  Var e;
  switch (spec.kind) {
    case Kind::shaw:
      require_bound(t.table, "a relative table", spec.kind);
      e = relative_vector_logits(q, k, t.table, Var{}, denom);
      break;
    case Kind::m4:
      require_bound(t.table, "a relative table", spec.kind);
      e = relative_vector_logits(q, k, t.table, t.table, denom);
      break;
    case Kind::deberta: {
      require_bound(t.table, "a relative table", spec.kind);
      require_bound(t.rel_query, "W^R", spec.kind);
      require_bound(t.rel_key, "W^T", spec.kind);
      e = relative_vector_logits(q, k, matmul(t.table, t.rel_query), matmul(t.table, t.rel_key), denom);
      break;
    }
    case Kind::m4m:
      require_bound(t.table, "a relative table", spec.kind);
      e = relative_product_logits(q, k, t.table, denom);
      break;
    case Kind::raffel:
      require_bound(t.scalar_table, "a scalar relative table", spec.kind);
      e = relative_scalar_logits(q, k, t.scalar_table, ScalarCombine::add, denom);
      break;
    case Kind::m2:
      require_bound(t.scalar_table, "a scalar relative table", spec.kind);
      e = relative_scalar_logits(q, k, t.scalar_table, ScalarCombine::multiply, denom);
      break;
    default:
      return content_logits(q, k, denom);
  }
  if (!spec.reset_cls) return e;
  Var content = content_logits(q, k, denom);
  return add(content, apply_reset(sub(e, content), *t.reset));
}

namespace {

std::pair<Var, Var> project(Var x, const HeadProjections& p) {
  if (!p.query.valid() || !p.key.valid()) throw ConfigError("head projections need W^Q and W^K");
  return {matmul(x, p.query), matmul(x, p.key)};
}

Var project_and_dispatch(Kind kind, Var x, const HeadProjections& p, PositionTerms terms, int f,
                         bool reset = false) {
  MethodSpec spec = MethodSpec::of(kind);
  spec.scaling_factor = f;
  spec.reset_cls = reset;
  terms.rel_query = p.rel_query;
  terms.rel_key = p.rel_key;
  terms.pos_query = p.pos_query;
  terms.pos_key = p.pos_key;
  terms.positions = p.positions;
  auto [q, k] = project(x, p);
  return head_logits(spec, q, k, terms);
}

PositionTerms terms_with_table(Var table) {
  PositionTerms t;
  t.table = table;
  return t;
}

PositionTerms terms_with_scalar_table(Var scalar_table) {
  PositionTerms t;
  t.scalar_table = scalar_table;
  return t;
}

}  // namespace

Var logits_baseline(Var x, const HeadProjections& p, int f) {
  return project_and_dispatch(Kind::none, x, p, {}, f);
}

Var logits_shaw(Var x, const HeadProjections& p, Var table, int f) {
  return project_and_dispatch(Kind::shaw, x, p, terms_with_table(table), f);
}

Var logits_raffel(Var x, const HeadProjections& p, Var scalar_table, int f) {
  return project_and_dispatch(Kind::raffel, x, p, terms_with_scalar_table(scalar_table), f);
}

Var logits_m2(Var x, const HeadProjections& p, Var scalar_table, int f) {
  return project_and_dispatch(Kind::m2, x, p, terms_with_scalar_table(scalar_table), f);
}

Var logits_m4(Var x, const HeadProjections& p, Var table, int f) {
  return project_and_dispatch(Kind::m4, x, p, terms_with_table(table), f);
}

Var logits_m4m(Var x, const HeadProjections& p, Var table, int f) {
  return project_and_dispatch(Kind::m4m, x, p, terms_with_table(table), f);
}

Var logits_deberta(Var x, const HeadProjections& p, Var table, int f) {
  return project_and_dispatch(Kind::deberta, x, p, terms_with_table(table), f);
}

Var logits_tupe(Var x, const HeadProjections& p, Var scalar_table, const ResetParams* reset, int f,
                bool reset_requested) {
  if (reset_requested && !reset) throw ConfigError("tupe: reset requested without θ1/θ2 parameters");
  PositionTerms terms = terms_with_scalar_table(scalar_table);
  if (reset) terms.reset = *reset;
  return project_and_dispatch(Kind::tupe, x, p, terms, f, reset != nullptr);
}

int vector_table_rows(const MethodSpec& spec, int n) { return 2 * std::min(spec.clip_k, n - 1) + 1; }

std::int64_t param_count(const MethodSpec& spec, int m, int n, int d, int h) {
  if (m < 1 || n < 1 || d < 1 || h < 1) throw ConfigError("param_count: m, n, d, h must be positive");
  if (d % h != 0) throw ConfigError("param_count: d=" + std::to_string(d) + " is not divisible by h=" + std::to_string(h));
  const std::int64_t M = m, N = n, D = d, dz = d / h;
  const std::int64_t copies = spec.share_across_heads ? 1 : h;
  const std::int64_t projections = spec.tie_position_projections ? 1 : 2;
  std::int64_t count = 0;
  switch (spec.kind) {
    case Kind::none:
    case Kind::absolute_sinusoid: break;
    case Kind::absolute_learned:
    case Kind::absolute_real_sentence: count = N * D; break;
    case Kind::shaw:
    case Kind::m4:
    case Kind::m4m: count = M * vector_table_rows(spec, n) * dz * copies; break;
    case Kind::raffel:
    case Kind::m2: count = M * (2 * N - 1) * copies; break;
    case Kind::deberta: count = M * vector_table_rows(spec, n) * dz * copies + projections * M * dz * dz; break;
    case Kind::tupe: count = M * N * dz + projections * M * dz * dz + M * (2 * N - 1) * copies; break;
  }
  if (spec.reset_cls) count += 2 * M;
  if (spec.combine_absolute) count += N * D;
  return count;
}

}  // namespace posemb
