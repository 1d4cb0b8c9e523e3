#pragma once

// Random single-head instances shared by the kernel unit tests and the
// acceptance runner.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "posemb/kernels.hpp"
#include "posemb/method.hpp"
#include "posemb/ops.hpp"
#include "posemb/oracle.hpp"
#include "posemb/rng.hpp"

namespace cases {

using posemb::Kind;
using posemb::MethodSpec;
using posemb::Tape;
using posemb::Tensor;
using posemb::Var;

struct HeadCase {
  MethodSpec spec;
  Tensor x, wq, wk;
  Tensor table, scalar_table;
  Tensor wr, wt, uq, uk, positions;
  Tensor theta1, theta2;

  std::vector<Tensor*> tensors() {
    std::vector<Tensor*> out;
    for (Tensor* t : {&x, &wq, &wk, &table, &scalar_table, &wr, &wt, &uq, &uk, &positions, &theta1, &theta2})
      if (t->size() > 0) out.push_back(t);
    return out;
  }

  posemb::OracleInputs oracle_inputs() const {
    posemb::OracleInputs in;
    in.x = x;
    in.wq = wq;
    in.wk = wk;
    in.table = table;
    in.scalar_table = scalar_table;
    in.wr = wr;
    in.wt = wt;
    in.uq = uq;
    in.uk = uk;
    in.positions = positions;
    if (theta1.size()) in.theta1 = theta1[0];
    if (theta2.size()) in.theta2 = theta2[0];
    return in;
  }
};

inline Tensor random(posemb::Shape shape, posemb::Rng& rng, double scale) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

inline int uniform_int(posemb::Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// The kernels exercised by the equivalence checks, including reset variants.
inline std::vector<MethodSpec> kernel_specs() {
  std::vector<MethodSpec> out;
  for (Kind k : {Kind::none, Kind::shaw, Kind::raffel, Kind::m2, Kind::m4, Kind::m4m, Kind::deberta, Kind::tupe})
    out.push_back(MethodSpec::of(k));
  for (Kind k : {Kind::tupe, Kind::m4, Kind::shaw, Kind::m2}) {
    MethodSpec s = MethodSpec::of(k);
    s.reset_cls = true;
    out.push_back(s);
  }
  return out;
}

inline HeadCase random_case(MethodSpec spec, std::uint64_t seed, int max_n = 32) {
  posemb::Rng rng = posemb::substream(seed, posemb::method_label(spec));
  const int n = uniform_int(rng, 2, max_n);
  const int dz = uniform_int(rng, 1, 8);
  const int dx = uniform_int(rng, 1, 12);
  const int f_choices[] = {1, 2, 3, 4, 6, 9};
  spec.scaling_factor = f_choices[uniform_int(rng, 0, 5)];

  HeadCase c;
  c.x = random({std::size_t(n), std::size_t(dx)}, rng, 1.0);
  c.wq = random({std::size_t(dx), std::size_t(dz)}, rng, 0.4);
  c.wk = random({std::size_t(dx), std::size_t(dz)}, rng, 0.4);
  if (posemb::uses_vector_table(spec.kind)) {
    spec.clip_k = uniform_int(rng, 1, n + 1);
    c.table = random({std::size_t(2 * spec.clip_k + 1), std::size_t(dz)}, rng, 0.5);
  }
  const int table_n = n + uniform_int(rng, 0, 3);
  if (posemb::uses_scalar_table(spec.kind)) c.scalar_table = random({std::size_t(2 * table_n - 1)}, rng, 0.5);
  if (spec.kind == Kind::deberta) {
    c.wr = random({std::size_t(dz), std::size_t(dz)}, rng, 0.5);
    c.wt = random({std::size_t(dz), std::size_t(dz)}, rng, 0.5);
  }
  if (spec.kind == Kind::tupe) {
    c.uq = random({std::size_t(dz), std::size_t(dz)}, rng, 0.5);
    c.uk = random({std::size_t(dz), std::size_t(dz)}, rng, 0.5);
    c.positions = random({std::size_t(table_n), std::size_t(dz)}, rng, 0.5);
  }
  if (spec.reset_cls) {
    c.theta1 = random({1}, rng, 1.0);
    c.theta2 = random({1}, rng, 1.0);
  }
  c.spec = spec;
  return c;
}

inline Var bind(Tape& tape, Tensor& t, bool as_parameter) {
  if (t.size() == 0) return Var{};
  return as_parameter ? tape.parameter(t) : tape.constant(t);
}

// Logits through the public kernel entry points. With `as_parameters`, every
// tensor is bound as a parameter so gradients flow into it.
inline Var kernel_logits(Tape& tape, HeadCase& c, bool as_parameters = false) {
  const MethodSpec& s = c.spec;
  posemb::HeadProjections p;
  Var x = bind(tape, c.x, as_parameters);
  p.query = bind(tape, c.wq, as_parameters);
  p.key = bind(tape, c.wk, as_parameters);
  p.rel_query = bind(tape, c.wr, as_parameters);
  p.rel_key = bind(tape, c.wt, as_parameters);
  p.pos_query = bind(tape, c.uq, as_parameters);
  p.pos_key = bind(tape, c.uk, as_parameters);
  p.positions = bind(tape, c.positions, as_parameters);
  Var table = bind(tape, c.table, as_parameters);
  Var scalars = bind(tape, c.scalar_table, as_parameters);
  std::optional<posemb::ResetParams> reset;
  if (s.reset_cls) reset = posemb::ResetParams{bind(tape, c.theta1, as_parameters), bind(tape, c.theta2, as_parameters)};

  if (s.kind == Kind::tupe)
    return posemb::logits_tupe(x, p, scalars, reset ? &*reset : nullptr, s.scaling_factor, s.reset_cls);
  if (s.reset_cls) {
    posemb::PositionTerms terms;
    terms.table = table;
    terms.scalar_table = scalars;
    terms.rel_query = p.rel_query;
    terms.rel_key = p.rel_key;
    terms.reset = reset;
    return posemb::head_logits(s, posemb::matmul(x, p.query), posemb::matmul(x, p.key), terms);
  }
  switch (s.kind) {
    case Kind::shaw: return posemb::logits_shaw(x, p, table, s.scaling_factor);
    case Kind::raffel: return posemb::logits_raffel(x, p, scalars, s.scaling_factor);
    case Kind::m2: return posemb::logits_m2(x, p, scalars, s.scaling_factor);
    case Kind::m4: return posemb::logits_m4(x, p, table, s.scaling_factor);
    case Kind::m4m: return posemb::logits_m4m(x, p, table, s.scaling_factor);
    case Kind::deberta: return posemb::logits_deberta(x, p, table, s.scaling_factor);
    default: return posemb::logits_baseline(x, p, s.scaling_factor);
  }
}

inline Tensor kernel_value(HeadCase& c) {
  Tape tape(false);
  return kernel_logits(tape, c).value();
}

// Largest |kernel - oracle| over `seeds` random instances of `spec`.
inline double oracle_gap(const MethodSpec& spec, int seeds, int max_n = 32) {
  double worst = 0;
  for (int s = 1; s <= seeds; ++s) {
    HeadCase c = random_case(spec, static_cast<std::uint64_t>(s), max_n);
    worst = std::max(worst, posemb::max_abs_diff(kernel_value(c), posemb::naive_oracle(c.spec, c.oracle_inputs())));
  }
  return worst;
}

inline bool rows_uniform(const Tensor& logits) {
  Tape tape(false);
  const Tensor probs = posemb::softmax_rows(tape.constant(logits)).value();
  const double u = 1.0 / static_cast<double>(probs.cols());
  for (double p : probs.values())
    if (p != u) return false;
  return true;
}

// Zero (or identity) relative parameters against the baseline with the
// same projections. Returns the worst absolute gap over `seeds` instances;
// the baseline is rescaled by sqrt(f_base / f) where denominators differ.
inline double reduction_gap(Kind kind, int seeds) {
  double worst = 0;
  for (int s = 1; s <= seeds; ++s) {
    HeadCase c = random_case(MethodSpec::of(kind), static_cast<std::uint64_t>(s) + 1000);
    HeadCase base = c;
    base.spec = MethodSpec::of(Kind::none);
    base.spec.scaling_factor = c.spec.scaling_factor;
    c.table.fill(0.0);
    if (kind == Kind::m2) c.scalar_table.fill(1.0);
    else c.scalar_table.fill(0.0);
    worst = std::max(worst, posemb::max_abs_diff(kernel_value(c), kernel_value(base)));
  }
  return worst;
}

}  // namespace cases
