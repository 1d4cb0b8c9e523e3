#include "posemb/method.hpp"

#include <charconv>
#include <vector>

#include "posemb/errors.hpp"

namespace posemb {
namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("method option " + std::string(what) + " expects an integer, got '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::none: return "none";
    case Kind::absolute_learned: return "absolute_learned";
    case Kind::absolute_sinusoid: return "absolute_sinusoid";
    case Kind::absolute_real_sentence: return "absolute_real_sentence";
    case Kind::shaw: return "shaw";
    case Kind::raffel: return "raffel";
    case Kind::m2: return "m2";
    case Kind::m4: return "m4";
    case Kind::m4m: return "m4m";
    case Kind::deberta: return "deberta";
    case Kind::tupe: return "tupe";
  }
  return "?";
}

std::optional<Kind> parse_kind(std::string_view text) {
  for (Kind k : kAllKinds)
    if (kind_name(k) == text) return k;
  if (text == "abs" || text == "absolute") return Kind::absolute_learned;
  if (text == "sinusoid") return Kind::absolute_sinusoid;
  if (text == "real_sentence") return Kind::absolute_real_sentence;
  return std::nullopt;
}

std::string valid_kind_list() {
  std::string out;
  for (Kind k : kAllKinds) {
    if (!out.empty()) out += ", ";
    out += kind_name(k);
  }
  return out;
}

bool is_relative(Kind kind) {
  switch (kind) {
    case Kind::shaw:
    case Kind::raffel:
    case Kind::m2:
    case Kind::m4:
    case Kind::m4m:
    case Kind::deberta:
    case Kind::tupe: return true;
    default: return false;
  }
}

bool uses_vector_table(Kind kind) {
  return kind == Kind::shaw || kind == Kind::m4 || kind == Kind::m4m || kind == Kind::deberta;
}

bool uses_scalar_table(Kind kind) { return kind == Kind::raffel || kind == Kind::m2 || kind == Kind::tupe; }

int default_scaling_factor(Kind kind) {
  if (kind == Kind::deberta) return 3;
  if (kind == Kind::tupe) return 2;
  return 1;
}

MethodSpec MethodSpec::of(Kind kind) {
  MethodSpec spec;
  spec.kind = kind;
  spec.scaling_factor = default_scaling_factor(kind);
  return spec;
}

void MethodSpec::validate() const {
  if (uses_vector_table(kind) && clip_k < 1) {
    throw ConfigError("clip_k must be >= 1 for " + std::string(kind_name(kind)));
  }
  if (scaling_factor < 1) throw ConfigError("scaling_factor must be a positive integer");
  if (reset_cls && !is_relative(kind)) {
    throw ConfigError("reset_cls requires a relative kind, got " + std::string(kind_name(kind)));
  }
  if (combine_absolute && !is_relative(kind)) {
    throw ConfigError("combine_absolute requires a relative kind, got " + std::string(kind_name(kind)));
  }
}

std::string method_label(const MethodSpec& spec) {
  std::string label;
  if (spec.combine_absolute) label += "abs+";
  switch (spec.kind) {
    case Kind::absolute_learned: label += "absolute"; break;
    case Kind::absolute_sinusoid: label += "sinusoid"; break;
    case Kind::absolute_real_sentence: label += "real_sentence"; break;
    default: label += kind_name(spec.kind);
  }
  if (spec.reset_cls) label += "+reset";
  std::vector<std::string> opts;
  if (spec.scaling_factor != default_scaling_factor(spec.kind)) opts.push_back("f=" + std::to_string(spec.scaling_factor));
  if (uses_vector_table(spec.kind) && spec.clip_k != MethodSpec{}.clip_k) opts.push_back("k=" + std::to_string(spec.clip_k));
  if (!spec.share_across_heads) opts.push_back("noshare");
  if (!spec.tie_position_projections) opts.push_back("untied");
  for (std::size_t i = 0; i < opts.size(); ++i) label += (i == 0 ? "@" : ",") + opts[i];
  return label;
}

MethodSpec parse_method(std::string_view text) {
  const auto at = text.find('@');
  const std::string_view head = text.substr(0, at);
  std::optional<Kind> kind;
  bool reset = false, abs = false;
  for (auto part : split(head, '+')) {
    if (part == "reset") {
      reset = true;
    } else if (part == "abs" && head.find('+') != std::string_view::npos) {
      abs = true;
    } else if (auto k = parse_kind(part)) {
      if (kind) throw ConfigError("method '" + std::string(text) + "' names two kinds");
      kind = k;
    } else {
      throw ConfigError("unknown method component '" + std::string(part) + "'; valid kinds: " + valid_kind_list());
    }
  }
  if (!kind && abs) {
    kind = Kind::absolute_learned;
    abs = false;
  }
  if (!kind) throw ConfigError("method '" + std::string(text) + "' names no kind");
  MethodSpec spec = MethodSpec::of(*kind);
  spec.reset_cls = reset;
  spec.combine_absolute = abs;
  if (at != std::string_view::npos) {
    for (auto opt : split(text.substr(at + 1), ',')) {
      if (opt == "noshare") {
        spec.share_across_heads = false;
      } else if (opt == "share") {
        spec.share_across_heads = true;
      } else if (opt == "untied") {
        spec.tie_position_projections = false;
      } else if (opt.starts_with("f=")) {
        spec.scaling_factor = parse_int(opt.substr(2), "f");
      } else if (opt.starts_with("k=")) {
        spec.clip_k = parse_int(opt.substr(2), "k");
      } else {
        throw ConfigError("unknown method option '" + std::string(opt) + "'");
      }
    }
  }
  spec.validate();
  return spec;
}

}  // namespace posemb
