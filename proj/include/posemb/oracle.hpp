#pragma once

#include <optional>

#include "posemb/method.hpp"
#include "posemb/tensor.hpp"

namespace posemb {

/// Plain tensors for one head, as consumed by naive_oracle. Members a method
/// does not use may stay empty.
struct OracleInputs {
  Tensor x;             // n x d_x
  Tensor wq, wk;        // d_x x d_z
  Tensor table;         // (2k+1) x d_z
  Tensor scalar_table;  // 2N-1, N >= n
  Tensor wr, wt;        // d_z x d_z
  Tensor uq, uk;        // d_z x d_z
  Tensor positions;     // N x d_z
  std::optional<double> theta1, theta2;
};

/// Attention logits of one head by an explicit loop over (i, j) using scalar
/// dot products only. Reference for every fused kernel; n <= 64.
Tensor naive_oracle(const MethodSpec& spec, const OracleInputs& in);

}  // namespace posemb
