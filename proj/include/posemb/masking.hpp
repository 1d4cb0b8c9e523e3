#pragma once

#include <cstddef>
#include <vector>

#include "posemb/encoder.hpp"
#include "posemb/rng.hpp"

namespace posemb {

struct MaskingPolicy {
  double rate = 0.15;
  double mask_fraction = 0.8;
  double random_fraction = 0.1;
  double keep_fraction = 0.1;

  void validate() const;
};

struct MaskResult {
  std::vector<int> targets;  // original id at target positions, -1 elsewhere
  std::size_t target_count = 0;
  std::size_t skipped_rows = 0;  // rows without any maskable token
};

// Word tokens (not specials, not padding) are maskable. Each is selected
// with probability `rate`; a row with maskable tokens always gets at least
// one target when rate > 0. Selected tokens become [MASK], a random word or
// stay unchanged according to the policy split.
MaskResult apply_mlm_mask(EncoderInput& batch, const MaskingPolicy& policy, int vocab_size, Rng& rng);

}  // namespace posemb
