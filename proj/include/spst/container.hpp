#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spst/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "the NSTW1 reader assumes a little-endian host");

namespace spst::container {

// "NSTW1" file: magic, u32 record count, then records of
//   u32 name length, UTF-8 name, u8 dtype tag, u32 rank, u32 dims[rank],
//   raw little-endian values.
inline constexpr char kMagic[5] = {'N', 'S', 'T', 'W', '1'};

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct Record {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("truncated file " + path);
  return v;
}

}  // namespace detail

inline void write(const std::string& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    if (r.values.size() != r.count()) {
      throw FormatError("record " + r.name + ": value count does not match dims");
    }
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(r.dtype));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) detail::put<std::uint32_t>(os, d);
    for (double v : r.values) {
      if (r.dtype == DType::f32) {
        detail::put<float>(os, static_cast<float>(v));
      } else {
        detail::put<double>(os, v);
      }
    }
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<Record> read(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[sizeof(kMagic)] = {};
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("bad magic in " + path + " (expected NSTW1)");
  }
  const auto n = detail::get<std::uint32_t>(is, path);
  std::vector<Record> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Record r;
    const auto len = detail::get<std::uint32_t>(is, path);
    if (len > 4096) throw FormatError("implausible record name length in " + path);
    r.name.resize(len);
    is.read(r.name.data(), len);
    if (!is) throw FormatError("truncated file " + path);
    const auto tag = detail::get<std::uint8_t>(is, path);
    if (tag != 1 && tag != 2) throw FormatError("record " + r.name + ": unknown dtype tag");
    r.dtype = static_cast<DType>(tag);
    const auto rank = detail::get<std::uint32_t>(is, path);
    if (rank > 8) throw FormatError("record " + r.name + ": implausible rank");
    for (std::uint32_t k = 0; k < rank; ++k) r.dims.push_back(detail::get<std::uint32_t>(is, path));
    const std::size_t count = r.count();
    r.values.resize(count);
    for (std::size_t k = 0; k < count; ++k) {
      r.values[k] = r.dtype == DType::f32 ? static_cast<double>(detail::get<float>(is, path))
                                          : detail::get<double>(is, path);
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline const Record* find(const std::vector<Record>& records, const std::string& name) {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

}  // namespace spst::container
