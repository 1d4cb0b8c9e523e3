#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace posemb {

enum class Kind {
  none,
  absolute_learned,
  absolute_sinusoid,
  absolute_real_sentence,
  shaw,
  raffel,
  m2,
  m4,
  m4m,
  deberta,
  tupe,
};

inline constexpr std::array<Kind, 11> kAllKinds = {
    Kind::none, Kind::absolute_learned, Kind::absolute_sinusoid, Kind::absolute_real_sentence,
    Kind::shaw, Kind::raffel,           Kind::m2,                Kind::m4,
    Kind::m4m,  Kind::deberta,          Kind::tupe,
};

std::string_view kind_name(Kind kind);
// Accepts canonical names plus the short aliases abs/absolute, sinusoid and real_sentence.
std::optional<Kind> parse_kind(std::string_view text);
std::string valid_kind_list();

// Relative kinds put position information into the attention logits.
bool is_relative(Kind kind);
// Kinds carrying a clipped table of 2k+1 vectors (Shaw family).
bool uses_vector_table(Kind kind);
// Kinds carrying an unclipped table of 2n-1 scalars.
bool uses_scalar_table(Kind kind);
int default_scaling_factor(Kind kind);

/// Which attention-logit equation to use and its knobs.
struct MethodSpec {
  Kind kind = Kind::absolute_learned;
  // Maximum relative distance for the Shaw-family tables.
  int clip_k = 64;
  // Logits are divided by sqrt(scaling_factor * d_z).
  int scaling_factor = 1;
  bool share_across_heads = true;
  // Replace the positional terms of the first (classification) token's row and column by θ1/θ2.
  bool reset_cls = false;
  // Add a learned absolute table to the input on top of a relative kind.
  bool combine_absolute = false;
  // DeBERTa: W^T is W^R. TUPE: U^K is U^Q. Matches the parameter-count convention of one
  // d_z x d_z projection per layer.
  bool tie_position_projections = true;

  static MethodSpec of(Kind kind);

  // Throws ConfigError when the combination is invalid.
  void validate() const;
  bool operator==(const MethodSpec&) const = default;
};

// Short label such as "m4", "m4+reset", "abs+m4m" or "m4@f=2,noshare".
std::string method_label(const MethodSpec& spec);
// Inverse of method_label; throws ConfigError on malformed text.
MethodSpec parse_method(std::string_view text);

}  // namespace posemb
