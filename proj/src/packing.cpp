#include "posemb/packing.hpp"

#include <algorithm>

#include "posemb/corpus.hpp"
#include "posemb/errors.hpp"

namespace posemb {

std::size_t PackResult::token_count() const {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.ids.size();
  return n;
}

PackResult pack_sequences(std::span<const std::vector<int>> sentences, int capacity) {
  if (capacity < 1) throw ConfigError("packing capacity must be positive");
  const auto cap = static_cast<std::size_t>(capacity);
  PackResult out;
  PackedRow row;
  for (const auto& sentence : sentences) {
    if (sentence.empty()) continue;
    std::size_t len = sentence.size();
    if (len > cap) {
      ++out.truncated_sentences;
      out.truncated_tokens += len - cap;
      len = cap;
    }
    if (row.ids.size() + len > cap) {
      out.rows.push_back(std::move(row));
      row = PackedRow{};
    }
    for (std::size_t t = 0; t < len; ++t) {
      row.ids.push_back(sentence[t]);
      row.sentence_positions.push_back(static_cast<int>(t) + 1);
    }
  }
  if (!row.ids.empty()) out.rows.push_back(std::move(row));
  return out;
}

EncoderInput make_batch(std::span<const PackedRow* const> rows, int length, bool prepend_cls) {
  if (rows.empty()) throw ContractError("make_batch: no rows");
  EncoderInput in;
  in.batch = static_cast<int>(rows.size());
  in.length = length;
  const auto total = static_cast<std::size_t>(in.batch) * static_cast<std::size_t>(length);
  in.ids.assign(total, kPadId);
  in.valid.assign(total, 0);
  in.sentence_positions.assign(total, 1);
  const std::size_t offset = prepend_cls ? 1 : 0;
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const PackedRow& r = *rows[b];
    if (r.ids.size() + offset > static_cast<std::size_t>(length))
      throw InputError("make_batch: row of " + std::to_string(r.ids.size()) + " tokens exceeds length " +
                       std::to_string(length));
    const std::size_t base = b * static_cast<std::size_t>(length);
    if (prepend_cls) {
      in.ids[base] = kClsId;
      in.valid[base] = 1;
    }
    for (std::size_t t = 0; t < r.ids.size(); ++t) {
      in.ids[base + offset + t] = r.ids[t];
      in.valid[base + offset + t] = 1;
      in.sentence_positions[base + offset + t] = r.sentence_positions[t];
    }
  }
  return in;
}

EncoderInput make_batch(std::span<const PackedRow> rows, int length, bool prepend_cls) {
  std::vector<const PackedRow*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r);
  return make_batch(std::span<const PackedRow* const>(ptrs), length, prepend_cls);
}

}  // namespace posemb
