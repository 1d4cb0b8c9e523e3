#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "posemb/encoder.hpp"

namespace posemb {

/// One packed training row: contiguous whole sentences.
struct PackedRow {
  std::vector<int> ids;
  std::vector<int> sentence_positions;  // 1-based, restarts at every sentence
};

struct PackResult {
  std::vector<PackedRow> rows;
  std::size_t truncated_sentences = 0;
  std::size_t truncated_tokens = 0;

  std::size_t token_count() const;
};

// Greedy full-sentence packing: a sentence that would overflow `capacity`
// starts a new row; a sentence longer than `capacity` is cut to fit.
PackResult pack_sequences(std::span<const std::vector<int>> sentences, int capacity);

/// Rows laid out as an encoder batch of width `length`. With `prepend_cls`
/// every row starts with the classification token (sentence position 1).
EncoderInput make_batch(std::span<const PackedRow* const> rows, int length, bool prepend_cls = true);
EncoderInput make_batch(std::span<const PackedRow> rows, int length, bool prepend_cls = true);

}  // namespace posemb
