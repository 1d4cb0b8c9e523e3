#include "posemb/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>

#include "posemb/errors.hpp"

namespace posemb {
namespace {

constexpr std::array<char, 8> kMagic = {'P', 'O', 'S', 'E', 'M', 'B', 'A', 'R'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw InputError("array container truncated");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

std::string get_string(std::istream& in, std::uint64_t length) {
  if (length > (std::uint64_t{1} << 32)) throw InputError("array container: implausible string length");
  std::string s(length, '\0');
  in.read(s.data(), static_cast<std::streamsize>(length));
  if (!in) throw InputError("array container truncated");
  return s;
}

}  // namespace

const NamedArray* ArrayContainer::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void write_container(std::ostream& out, const ArrayContainer& container) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, container.metadata.size());
  out.write(container.metadata.data(), static_cast<std::streamsize>(container.metadata.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(container.arrays.size()));
  for (const auto& a : container.arrays) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensor.rank()));
    for (auto extent : a.tensor.shape()) put<std::uint64_t>(out, extent);
    for (double v : a.tensor.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error("failed writing array container");
}

ArrayContainer read_container(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw InputError("not an array container (bad magic)");
  const auto version = get<std::uint32_t>(in);
  if (version != kVersion) throw InputError("unsupported array container version " + std::to_string(version));
  ArrayContainer c;
  c.metadata = get_string(in, get<std::uint64_t>(in));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = get_string(in, get<std::uint32_t>(in));
    const auto rank = get<std::uint32_t>(in);
    if (rank == 0 || rank > 8) throw InputError("array '" + a.name + "' has invalid rank");
    Shape shape(rank);
    for (auto& extent : shape) extent = get<std::uint64_t>(in);
    std::vector<double> values(shape_size(shape));
    for (auto& v : values) v = std::bit_cast<double>(get<std::uint64_t>(in));
    a.tensor = Tensor(std::move(shape), std::move(values));
    c.arrays.push_back(std::move(a));
  }
  return c;
}

void save_container(const std::filesystem::path& path, const ArrayContainer& container) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_container(out, container);
}

ArrayContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return read_container(in);
}

}  // namespace posemb
