#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "posemb/encoder.hpp"
#include "posemb/serialize.hpp"

namespace posemb {

// Named-array container of every parameter, with the model config text as metadata.
ArrayContainer checkpoint_container(const Encoder& model);
void save_checkpoint(const std::filesystem::path& path, const Encoder& model);

// Rebuilds the model described by the stored config and copies the arrays
// in. Missing, extra or reshaped arrays raise InputError listing each one.
Encoder restore_checkpoint(const ArrayContainer& container);
Encoder load_checkpoint(const std::filesystem::path& path);
// As above, and additionally rejects a stored config that differs from
// `expected`, listing each differing key.
Encoder load_checkpoint(const std::filesystem::path& path, const EncoderConfig& expected);

struct ArrayAudit {
  std::string name;
  std::string group;
  Shape shape;
  std::size_t scalars = 0;
  double rms = 0;
  bool finite = true;
};

struct CheckpointAudit {
  EncoderConfig config;
  std::vector<ArrayAudit> arrays;
  std::size_t total_scalars = 0;
  std::size_t position_scalars = 0;
  std::int64_t closed_form = 0;
  bool all_finite = true;
};

CheckpointAudit audit_checkpoint(const std::filesystem::path& path);

}  // namespace posemb
