#include "posemb/masking.hpp"

#include <cmath>
#include <random>

#include "posemb/corpus.hpp"
#include "posemb/errors.hpp"

namespace posemb {

void MaskingPolicy::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ConfigError("masking rate must lie in [0, 1]");
  if (mask_fraction < 0 || random_fraction < 0 || keep_fraction < 0)
    throw ConfigError("masking fractions must be non-negative");
  if (std::abs(mask_fraction + random_fraction + keep_fraction - 1.0) > 1e-9)
    throw ConfigError("masking fractions must sum to 1");
}

MaskResult apply_mlm_mask(EncoderInput& batch, const MaskingPolicy& policy, int vocab_size, Rng& rng) {
  policy.validate();
  if (vocab_size <= kFirstWordId) throw ConfigError("vocabulary has no word tokens to sample");
  const auto L = static_cast<std::size_t>(batch.length);
  MaskResult out;
  out.targets.assign(batch.ids.size(), -1);
  if (policy.rate == 0.0) return out;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> random_word(kFirstWordId, vocab_size - 1);
  std::vector<std::size_t> maskable;
  for (std::size_t b = 0; b < static_cast<std::size_t>(batch.batch); ++b) {
    maskable.clear();
    for (std::size_t t = 0; t < L; ++t) {
      const std::size_t i = b * L + t;
      const bool real = batch.valid.empty() || batch.valid[i];
      if (real && batch.ids[i] >= kFirstWordId) maskable.push_back(i);
    }
    if (maskable.empty()) {
      ++out.skipped_rows;
      continue;
    }
    std::vector<std::size_t> chosen;
    for (std::size_t i : maskable)
      if (unit(rng) < policy.rate) chosen.push_back(i);
    if (chosen.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, maskable.size() - 1);
      chosen.push_back(maskable[pick(rng)]);
    }
    for (std::size_t i : chosen) {
      out.targets[i] = batch.ids[i];
      ++out.target_count;
      const double u = unit(rng);
      if (u < policy.mask_fraction) {
        batch.ids[i] = kMaskId;
      } else if (u < policy.mask_fraction + policy.random_fraction) {
        batch.ids[i] = random_word(rng);
      }
    }
  }
  return out;
}

}  // namespace posemb
