#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "kptrack/error.hpp"
#include "kptrack/tensor.hpp"

// TSR tensor blocks: "TSR1", u32 ndim, ndim x u32 dims, row-major f32 payload,
// all little-endian.

namespace kptrack::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_i32(std::ostream& os, std::int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline void write_f32(std::ostream& os, float v) { os.write(reinterpret_cast<const char*>(&v), 4); }

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ParseError(what + ": truncated header");
  return v;
}

inline void read_floats(std::istream& is, float* dst, std::size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw ParseError(what + ": truncated payload (expected " + std::to_string(n) + " floats)");
  }
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

}  // namespace detail

inline void write_tsr(std::ostream& os, const Tensor& t) {
  os.write("TSR1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float)));
}

inline Tensor read_tsr(std::istream& is, const std::string& what = "TSR") {
  char magic[4];
  if (!is.read(magic, 4)) throw ParseError(what + ": truncated header");
  if (std::memcmp(magic, "TSR1", 4) != 0) throw ParseError(what + ": bad magic, expected \"TSR1\"");
  const auto ndim = detail::read_pod<std::uint32_t>(is, what);
  if (ndim == 0 || ndim > 8) throw ParseError(what + ": implausible rank " + std::to_string(ndim));
  Shape shape;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = detail::read_pod<std::uint32_t>(is, what);
    if (d == 0) throw ParseError(what + ": zero-sized dimension");
    shape.push_back(d);
  }
  Tensor t(shape);
  detail::read_floats(is, t.ptr(), static_cast<std::size_t>(t.size()), what);
  return t;
}

inline void write_tsr(const std::filesystem::path& path, const Tensor& t) {
  auto os = detail::open_out(path);
  write_tsr(os, t);
  if (!os) throw IoError("failed writing " + path.string());
}

inline Tensor read_tsr(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  return read_tsr(is, path.string());
}

}  // namespace kptrack::io
