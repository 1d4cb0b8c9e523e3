#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "posemb/compare.hpp"
#include "posemb/encoder.hpp"
#include "posemb/tasks.hpp"
#include "posemb/training.hpp"

namespace posemb {

/// Everything one command needs. Loaded from a sectioned key = value file;
/// every key can also be given on the command line.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string output = "runs/default";
  std::string corpus;
  int workers = 1;

  EncoderConfig encoder;
  TrainConfig train;

  std::vector<TaskKind> task_kinds = {TaskKind::offset_copy};
  ProbeTask task;  // shared task shape; kind is taken from task_kinds
  FineTuneConfig finetune;

  std::vector<MethodSpec> methods;  // compare
  std::vector<std::uint64_t> seeds = {1, 2};
  std::string sweep;
  int pretrain_steps = 0;
  int pretrain_sentences = 2000;

  void validate() const;
  std::vector<ProbeTask> probe_tasks() const;
  // Methods compared: the sweep preset when set, else the explicit list.
  std::vector<MethodSpec> compare_methods() const;
  CompareSettings compare_settings() const;
};

struct ConfigEntry {
  std::string section;
  std::string key;
  std::string value;
  std::string origin;  // "file:line" or "command line"
};

// Grammar: '#' or ';' starts a comment line, "[section]" opens a section,
// "key = value" sets a key inside the current section.
std::vector<ConfigEntry> parse_config_entries(std::string_view text, std::string_view source);

// Applies entries over defaults. Unknown sections or keys, and malformed
// values, raise ConfigError naming the key and origin. When the scaling
// factor is not given it follows the method kind's default.
RunConfig resolve_config(const std::vector<ConfigEntry>& entries);
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<ConfigEntry>& overrides = {});

// Command-line overrides: "--key value", "--key=value", "--section.key value".
// A bare key must name exactly one registered key, unless it is ambiguous
// and one of the candidates lives in `preferred_section`.
std::vector<ConfigEntry> parse_override_args(const std::vector<std::string>& args,
                                             std::string_view preferred_section = {});

// Canonical text of the fully resolved configuration; round-trips through
// resolve_config(parse_config_entries(...)).
std::string config_text(const RunConfig& config);
std::string encoder_config_text(const EncoderConfig& config);
EncoderConfig parse_encoder_config(std::string_view text);

// "section.key: a -> b" for every key whose value differs.
std::vector<std::string> config_diff(std::string_view a, std::string_view b);

// All registered keys as "section.key".
std::vector<std::string> config_keys();

}  // namespace posemb
