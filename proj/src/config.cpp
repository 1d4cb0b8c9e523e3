#include "posemb/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "posemb/errors.hpp"

namespace posemb {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t comma = s.find(',', start);
    const std::string item = trim(s.substr(start, comma == std::string_view::npos ? s.size() - start : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct ValueError {
  std::string what;
};

long long to_integer(const std::string& s) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValueError{"expected an integer"};
  return v;
}

int to_int(const std::string& s) {
  const long long v = to_integer(s);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) throw ValueError{"integer out of range"};
  return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ValueError{"expected a non-negative integer"};
  return v;
}

double to_double(const std::string& s) {
  if (s.empty()) throw ValueError{"expected a number"};
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw ValueError{"expected a number"};
  return v;
}

bool to_bool(const std::string& s) {
  std::string l = s;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
  if (l == "false" || l == "no" || l == "off" || l == "0") return false;
  throw ValueError{"expected true/false"};
}

std::string from_bool(bool b) { return b ? "true" : "false"; }
std::string from_double(double d) { return fmt::format("{}", d); }

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + f(items[i]);
  return out;
}

struct KeyDef {
  std::string_view section;
  std::string_view key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define POSEMB_INT(SEC, KEY, FIELD)                                          \
  KeyDef {                                                                   \
    SEC, KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_int(v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }           \
  }
#define POSEMB_DOUBLE(SEC, KEY, FIELD)                                          \
  KeyDef {                                                                      \
    SEC, KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(v); }, \
        [](const RunConfig& c) { return from_double(c.FIELD); }                 \
  }
#define POSEMB_BOOL(SEC, KEY, FIELD)                                          \
  KeyDef {                                                                    \
    SEC, KEY, [](RunConfig& c, const std::string& v) { c.FIELD = to_bool(v); }, \
        [](const RunConfig& c) { return from_bool(c.FIELD); }                 \
  }

const std::vector<KeyDef>& registry() {
  static const std::vector<KeyDef> keys = {
      {"run", "seed", [](RunConfig& c, const std::string& v) { c.seed = to_u64(v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"run", "output", [](RunConfig& c, const std::string& v) { c.output = v; },
       [](const RunConfig& c) { return c.output; }},
      {"run", "corpus", [](RunConfig& c, const std::string& v) { c.corpus = v; },
       [](const RunConfig& c) { return c.corpus; }},
      POSEMB_INT("run", "workers", workers),

      POSEMB_INT("encoder", "layers", encoder.layers),
      POSEMB_INT("encoder", "heads", encoder.heads),
      POSEMB_INT("encoder", "width", encoder.width),
      POSEMB_INT("encoder", "ff_width", encoder.ff_width),
      POSEMB_INT("encoder", "max_len", encoder.max_len),
      POSEMB_INT("encoder", "vocab_size", encoder.vocab_size),
      POSEMB_DOUBLE("encoder", "dropout", encoder.dropout),
      POSEMB_BOOL("encoder", "tie_mlm_head", encoder.tie_mlm_head),
      POSEMB_BOOL("encoder", "segment_embedding", encoder.segment_embedding),
      POSEMB_DOUBLE("encoder", "layer_norm_eps", encoder.layer_norm_eps),

      {"method", "kind",
       [](RunConfig& c, const std::string& v) {
         auto k = parse_kind(v);
         if (!k) throw ValueError{"unknown method kind (valid: " + valid_kind_list() + ")"};
         c.encoder.method.kind = *k;
       },
       [](const RunConfig& c) { return std::string(kind_name(c.encoder.method.kind)); }},
      POSEMB_INT("method", "clip_k", encoder.method.clip_k),
      POSEMB_INT("method", "scaling_factor", encoder.method.scaling_factor),
      POSEMB_BOOL("method", "share_across_heads", encoder.method.share_across_heads),
      POSEMB_BOOL("method", "reset_cls", encoder.method.reset_cls),
      POSEMB_BOOL("method", "combine_absolute", encoder.method.combine_absolute),
      POSEMB_BOOL("method", "tie_position_projections", encoder.method.tie_position_projections),

      POSEMB_INT("train", "steps", train.steps),
      POSEMB_INT("train", "batch_size", train.batch_size),
      POSEMB_DOUBLE("train", "learning_rate", train.adam.learning_rate),
      POSEMB_DOUBLE("train", "warmup_fraction", train.adam.warmup_fraction),
      POSEMB_DOUBLE("train", "beta1", train.adam.beta1),
      POSEMB_DOUBLE("train", "beta2", train.adam.beta2),
      POSEMB_DOUBLE("train", "epsilon", train.adam.epsilon),
      POSEMB_DOUBLE("train", "max_grad_norm", train.adam.max_grad_norm),
      POSEMB_DOUBLE("train", "mask_rate", train.masking.rate),
      POSEMB_DOUBLE("train", "mask_fraction", train.masking.mask_fraction),
      POSEMB_DOUBLE("train", "random_fraction", train.masking.random_fraction),
      POSEMB_DOUBLE("train", "keep_fraction", train.masking.keep_fraction),
      POSEMB_INT("train", "eval_every", train.eval_every),
      POSEMB_INT("train", "eval_rows", train.eval_rows),
      POSEMB_DOUBLE("train", "holdout_fraction", train.holdout_fraction),
      POSEMB_DOUBLE("train", "target_loss", train.target_loss),

      {"tasks", "names",
       [](RunConfig& c, const std::string& v) {
         c.task_kinds.clear();
         for (const auto& item : split_list(v)) {
           auto k = parse_task(item);
           if (!k)
             throw ValueError{"unknown task '" + item +
                              "' (valid: offset_copy, relative_distance_cls, absolute_position_probe, cls_summary)"};
           c.task_kinds.push_back(*k);
         }
       },
       [](const RunConfig& c) {
         return join<TaskKind>(c.task_kinds, [](const TaskKind& k) { return std::string(task_name(k)); });
       }},
      POSEMB_INT("tasks", "length", task.length),
      POSEMB_INT("tasks", "content_vocab", task.content_vocab),
      POSEMB_INT("tasks", "offset", task.offset),
      POSEMB_INT("tasks", "max_distance", task.max_distance),
      POSEMB_INT("tasks", "count_classes", task.count_classes),

      POSEMB_INT("finetune", "steps", finetune.steps),
      POSEMB_INT("finetune", "batch_size", finetune.batch_size),
      POSEMB_INT("finetune", "train_examples", finetune.train_examples),
      POSEMB_INT("finetune", "test_examples", finetune.test_examples),
      POSEMB_DOUBLE("finetune", "learning_rate", finetune.adam.learning_rate),
      POSEMB_DOUBLE("finetune", "warmup_fraction", finetune.adam.warmup_fraction),
      POSEMB_DOUBLE("finetune", "max_grad_norm", finetune.adam.max_grad_norm),

      {"compare", "methods",
       [](RunConfig& c, const std::string& v) {
         c.methods.clear();
         for (const auto& item : split_list(v)) {
           try {
             c.methods.push_back(parse_method(item));
           } catch (const ConfigError& e) {
             throw ValueError{e.what()};
           }
         }
       },
       [](const RunConfig& c) { return join<MethodSpec>(c.methods, method_label); }},
      {"compare", "seeds",
       [](RunConfig& c, const std::string& v) {
         c.seeds.clear();
         for (const auto& item : split_list(v)) c.seeds.push_back(to_u64(item));
       },
       [](const RunConfig& c) {
         return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
       }},
      {"compare", "sweep", [](RunConfig& c, const std::string& v) { c.sweep = v; },
       [](const RunConfig& c) { return c.sweep; }},
      POSEMB_INT("compare", "pretrain_steps", pretrain_steps),
      POSEMB_INT("compare", "pretrain_sentences", pretrain_sentences),
  };
  return keys;
}

#undef POSEMB_INT
#undef POSEMB_DOUBLE
#undef POSEMB_BOOL

const KeyDef* find_key(std::string_view section, std::string_view key) {
  for (const auto& k : registry())
    if (k.section == section && k.key == key) return &k;
  return nullptr;
}

bool known_section(std::string_view section) {
  return std::any_of(registry().begin(), registry().end(), [&](const KeyDef& k) { return k.section == section; });
}

}  // namespace

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("run.workers must be at least 1");
  if (output.empty()) throw ConfigError("run.output must not be empty");
  encoder.validate();
  train.validate();
  finetune.validate();
  if (task_kinds.empty()) throw ConfigError("tasks.names must list at least one task");
  for (const auto& t : probe_tasks()) t.validate();
  if (seeds.empty()) throw ConfigError("compare.seeds must list at least one seed");
  if (!sweep.empty() && !methods.empty()) throw ConfigError("compare.sweep and compare.methods are mutually exclusive");
  if (!sweep.empty()) preset_methods(sweep);
  for (const auto& m : methods) m.validate();
  if (pretrain_steps < 0) throw ConfigError("compare.pretrain_steps must be non-negative");
  if (pretrain_sentences < 2) throw ConfigError("compare.pretrain_sentences must be at least 2");
}

std::vector<ProbeTask> RunConfig::probe_tasks() const {
  std::vector<ProbeTask> out;
  for (TaskKind k : task_kinds) {
    ProbeTask t = task;
    t.kind = k;
    out.push_back(t);
  }
  return out;
}

std::vector<MethodSpec> RunConfig::compare_methods() const {
  if (!sweep.empty()) return preset_methods(sweep);
  if (methods.empty()) throw ConfigError("compare needs compare.methods or compare.sweep");
  return methods;
}

CompareSettings RunConfig::compare_settings() const {
  CompareSettings s;
  s.base = encoder;
  s.finetune = finetune;
  s.pretrain = train;
  s.pretrain_steps = pretrain_steps;
  s.pretrain_sentences = pretrain_sentences;
  s.workers = workers;
  return s;
}

std::vector<ConfigEntry> parse_config_entries(std::string_view text, std::string_view source) {
  std::vector<ConfigEntry> out;
  std::string section;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    const std::string origin = fmt::format("{}:{}", source, line_no);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ": unterminated section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!known_section(section)) throw ConfigError(origin + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(origin + ": key outside any section");
    out.push_back({section, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1)),
                   origin});
  }
  return out;
}

RunConfig resolve_config(const std::vector<ConfigEntry>& entries) {
  RunConfig config;
  bool scaling_given = false;
  for (const auto& e : entries) {
    const KeyDef* def = find_key(e.section, e.key);
    if (!def) throw ConfigError(e.origin + ": unknown key '" + e.key + "' in section [" + e.section + "]");
    try {
      def->set(config, e.value);
    } catch (const ValueError& err) {
      throw ConfigError(fmt::format("{}: {}.{} = '{}': {}", e.origin, e.section, e.key, e.value, err.what));
    }
    if (e.section == "method" && e.key == "scaling_factor") scaling_given = true;
  }
  if (!scaling_given) config.encoder.method.scaling_factor = default_scaling_factor(config.encoder.method.kind);
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<ConfigEntry>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto entries = parse_config_entries(buffer.str(), path.string());
  entries.insert(entries.end(), overrides.begin(), overrides.end());
  return resolve_config(entries);
}

std::vector<ConfigEntry> parse_override_args(const std::vector<std::string>& args, std::string_view preferred_section) {
  std::vector<ConfigEntry> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + arg + "'");
    std::string name = arg.substr(2), value;
    if (const auto eq = name.find('='); eq != std::string::npos) {
      value = name.substr(eq + 1);
      name = name.substr(0, eq);
    } else {
      if (i + 1 >= args.size()) throw ConfigError("option --" + name + " needs a value");
      value = args[++i];
    }
    std::string section, key = name;
    if (const auto dot = name.find('.'); dot != std::string::npos) {
      section = name.substr(0, dot);
      key = name.substr(dot + 1);
      if (!find_key(section, key)) throw ConfigError("unknown option --" + name);
    } else {
      std::vector<std::string> matches;
      for (const auto& k : registry())
        if (k.key == key) matches.push_back(std::string(k.section));
      if (matches.empty()) throw ConfigError("unknown option --" + name);
      if (matches.size() > 1 && std::find(matches.begin(), matches.end(), preferred_section) != matches.end())
        matches = {std::string(preferred_section)};
      if (matches.size() > 1) {
        std::string options;
        for (const auto& s : matches) options += (options.empty() ? "--" : ", --") + s + "." + key;
        throw ConfigError("option --" + name + " is ambiguous; use one of " + options);
      }
      section = matches.front();
    }
    out.push_back({section, key, value, "command line --" + name});
  }
  return out;
}

namespace {

std::string sections_text(const RunConfig& config, std::initializer_list<std::string_view> only) {
  std::string out;
  std::string_view current;
  for (const auto& k : registry()) {
    if (only.size() && std::find(only.begin(), only.end(), k.section) == only.end()) continue;
    if (k.section != current) {
      out += (out.empty() ? "[" : "\n[") + std::string(k.section) + "]\n";
      current = k.section;
    }
    out += fmt::format("{} = {}\n", k.key, k.get(config));
  }
  return out;
}

}  // namespace

std::string config_text(const RunConfig& config) { return sections_text(config, {}); }

std::string encoder_config_text(const EncoderConfig& encoder) {
  RunConfig c;
  c.encoder = encoder;
  return sections_text(c, {"encoder", "method"});
}

EncoderConfig parse_encoder_config(std::string_view text) {
  const auto entries = parse_config_entries(text, "checkpoint");
  for (const auto& e : entries)
    if (e.section != "encoder" && e.section != "method")
      throw ConfigError(e.origin + ": unexpected section [" + e.section + "] in model config");
  return resolve_config(entries).encoder;
}

std::vector<std::string> config_diff(std::string_view a, std::string_view b) {
  auto as_map = [](std::string_view text) {
    std::map<std::string, std::string> m;
    for (const auto& e : parse_config_entries(text, "diff")) m[e.section + "." + e.key] = e.value;
    return m;
  };
  const auto ma = as_map(a), mb = as_map(b);
  std::vector<std::string> out;
  for (const auto& [key, va] : ma) {
    auto it = mb.find(key);
    if (it == mb.end())
      out.push_back(key + ": " + va + " -> (absent)");
    else if (it->second != va)
      out.push_back(key + ": " + va + " -> " + it->second);
  }
  for (const auto& [key, vb] : mb)
    if (!ma.count(key)) out.push_back(key + ": (absent) -> " + vb);
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : registry()) out.push_back(std::string(k.section) + "." + std::string(k.key));
  return out;
}

}  // namespace posemb
