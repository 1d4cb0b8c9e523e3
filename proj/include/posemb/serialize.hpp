#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "posemb/tensor.hpp"

namespace posemb {

struct NamedArray {
  std::string name;
  Tensor tensor;
};

/// Flat container of named double arrays plus a free-text metadata block.
///
/// Layout (all integers and doubles little-endian):
///   "POSEMBAR"  u32 version(=1)  u64 meta_len  meta bytes  u32 count
///   count x { u32 name_len  name  u32 rank  u64 extent[rank]  f64 data[...] }
struct ArrayContainer {
  std::string metadata;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_container(std::ostream& out, const ArrayContainer& container);
ArrayContainer read_container(std::istream& in);
void save_container(const std::filesystem::path& path, const ArrayContainer& container);
ArrayContainer load_container(const std::filesystem::path& path);

}  // namespace posemb
