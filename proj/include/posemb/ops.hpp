#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "posemb/tape.hpp"

namespace posemb {

/// Row-major boolean matrix; a true entry may receive attention.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  // Every query row may attend exactly to the valid keys.
  static Mask key_padding(std::span<const std::uint8_t> key_valid, std::size_t rows);
  bool operator()(std::size_t r, std::size_t c) const { return allowed[r * cols + c] != 0; }
};

Var matmul(Var a, Var b);
// a @ b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// a[r, c] + bias[c] for every row.
Var add_bias(Var a, Var bias);
Var sum(Var a);

Var slice(Var a, std::size_t row0, std::size_t nrows, std::size_t col0, std::size_t ncols);
// Tiles a grid_rows x grid_cols arrangement of blocks (row-major order) into one matrix.
Var concat_grid(std::span<const Var> blocks, std::size_t grid_rows, std::size_t grid_cols);
Var concat_cols(std::span<const Var> blocks);
Var concat_rows(std::span<const Var> blocks);

// Embedding lookup; the backward pass scatter-adds into the table.
Var gather_rows(Var table, std::span<const int> ids);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Exact (erf) GELU.
Var gelu(Var x);
Var softmax_rows(Var x, const Mask* mask = nullptr);
// Mean negative log-likelihood over rows whose target is >= 0.
Var cross_entropy_from_logits(Var logits, std::span<const int> targets);
// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, std::mt19937_64& rng);

}  // namespace posemb
