#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>

#include "posemb/method.hpp"
#include "posemb/tape.hpp"

namespace posemb {

/// clip(j - i, k) = max(-k, min(k, j - i)).
int clip_offset(int offset, int k);
/// Row of a (2k+1)-row relative table for query position i and key position j
/// (1-based); row k holds offset 0.
std::size_t relative_index(int i, int j, int k);

/// Per-head projection matrices. Optional members are left unbound when the
/// method does not use them.
struct HeadProjections {
  Var query;       // W^Q  d_x x d_z
  Var key;         // W^K  d_x x d_z
  Var value;       // W^V  d_x x d_z
  Var rel_query;   // W^R  d_z x d_z (deberta)
  Var rel_key;     // W^T  d_z x d_z (deberta)
  Var pos_query;   // U^Q  d_z x d_z (tupe)
  Var pos_key;     // U^K  d_z x d_z (tupe)
  Var positions;   // p    n x d_z   (tupe)
};

struct ResetParams {
  Var theta1;  // logit offset for the classification token's row
  Var theta2;  // logit offset for the other rows' first column
};

/// Everything position-related that one head's logits may read.
struct PositionTerms {
  Var table;         // (2k+1) x d_z, rows w_{-k..k}
  Var scalar_table;  // 2n-1 scalars, w_{1-n..n-1}
  Var rel_query, rel_key, pos_query, pos_key, positions;
  std::optional<ResetParams> reset;
};

double logit_denominator(int scaling_factor, std::size_t head_width);

// Fused logits on already-projected queries q and keys k (both n x d_z).
//
//   e_ij = [q_i.k_j + q_i.Tq[r] + k_j.Tk[r]] / denom,  r = clip(j-i, k) + k
//
// Either table may be unbound. Covers baseline (none), Shaw (Tq), M4 (Tq=Tk)
// and DeBERTa (Tq = T W^R, Tk = T W^T).
Var relative_vector_logits(Var q, Var k, Var query_table, Var key_table, double denom);
// e_ij = (q_i.k_j)(q_i.w_r)(k_j.w_r) / denom
Var relative_product_logits(Var q, Var k, Var table, double denom);

enum class ScalarCombine { add, multiply };
// e_ij = (q_i.k_j + a_ij) / denom   or   (q_i.k_j) a_ij / denom,  a_ij = w_{j-i}
Var relative_scalar_logits(Var q, Var k, Var scalar_table, ScalarCombine combine, double denom);
// v_ij + w_{j-i}
Var add_relative_bias(Var v, Var scalar_table);

/// Row 1 becomes θ1, column 1 of every other row becomes θ2, the rest is
/// passed through untouched. Requires at least two positions.
Var apply_reset(Var v, const ResetParams& reset);

/// Dispatches on spec.kind. Absolute and none kinds use the plain scaled dot
/// product. When reset applies, the positional part e - content is reset and
/// added back to the content term.
Var head_logits(const MethodSpec& spec, Var q, Var k, const PositionTerms& terms);

Var logits_baseline(Var x, const HeadProjections& p, int scaling_factor = 1);
Var logits_shaw(Var x, const HeadProjections& p, Var table, int scaling_factor = 1);
Var logits_raffel(Var x, const HeadProjections& p, Var scalar_table, int scaling_factor = 1);
Var logits_m2(Var x, const HeadProjections& p, Var scalar_table, int scaling_factor = 1);
Var logits_m4(Var x, const HeadProjections& p, Var table, int scaling_factor = 1);
Var logits_m4m(Var x, const HeadProjections& p, Var table, int scaling_factor = 1);
Var logits_deberta(Var x, const HeadProjections& p, Var table, int scaling_factor = 3);
// Throws ConfigError when `reset_requested` but no parameters are supplied.
Var logits_tupe(Var x, const HeadProjections& p, Var scalar_table, const ResetParams* reset, int scaling_factor = 2,
                bool reset_requested = false);

/// Closed-form number of position-embedding parameters for m layers, maximum
/// length n, width d and h heads (the Table-1 accounting, extended with the
/// sharing, reset, clip and combine flags of `spec`).
std::int64_t param_count(const MethodSpec& spec, int m, int n, int d, int h);
// Rows of the Shaw-family table actually allocated: 2 min(k, n-1) + 1.
int vector_table_rows(const MethodSpec& spec, int n);

}  // namespace posemb
