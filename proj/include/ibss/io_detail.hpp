#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "ibss/common.hpp"

// Byte-level primitives for the IBSS binary formats. Values are serialized
// little-endian regardless of host order.
namespace ibss::io {

inline constexpr char k_magic[4] = {'I', 'B', 'S', 'S'};
inline constexpr std::uint16_t k_format_version = 1;
// Written in the N slot to mark a multi-section container instead of a series.
inline constexpr std::uint16_t k_container_marker = 0xFFFF;

inline void write_bytes_le(std::ostream& out, const unsigned char* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      out.put(static_cast<char>(p[n - 1 - i]));
    }
  }
}

inline void read_bytes_le(std::istream& in, unsigned char* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      p[n - 1 - i] = static_cast<unsigned char>(in.get());
    }
  }
}

template <typename T>
void write_value(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  write_bytes_le(out, buf, sizeof(T));
}

template <typename T>
T read_value(std::istream& in) {
  unsigned char buf[sizeof(T)];
  read_bytes_le(in, buf, sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void write_u16(std::ostream& out, std::uint16_t v) { write_value(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { write_value(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_value(out, v); }
inline void write_f64(std::ostream& out, double v) { write_value(out, v); }
inline std::uint16_t read_u16(std::istream& in) { return read_value<std::uint16_t>(in); }
inline std::uint32_t read_u32(std::istream& in) { return read_value<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_value<std::uint64_t>(in); }
inline double read_f64(std::istream& in) { return read_value<double>(in); }

inline void write_magic(std::ostream& out) { out.write(k_magic, 4); }

inline void expect_magic(std::istream& in, const std::string& path) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, k_magic, 4) != 0) {
    throw Error(ErrorCategory::k_format, "bad magic bytes in " + path);
  }
}

// Named payload blocks for checkpoint files. A container is
// magic | version | 0xFFFF | section count u32 | sections, where each section
// is name length u32 | name | payload length u64 | payload.
struct Section {
  std::string name;
  std::vector<unsigned char> payload;
};

inline void write_container(std::ostream& out, const std::vector<Section>& sections) {
  write_magic(out);
  write_u16(out, k_format_version);
  write_u16(out, k_container_marker);
  write_u32(out, static_cast<std::uint32_t>(sections.size()));
  for (const auto& s : sections) {
    write_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out.write(s.name.data(), static_cast<std::streamsize>(s.name.size()));
    write_u64(out, s.payload.size());
    out.write(reinterpret_cast<const char*>(s.payload.data()),
              static_cast<std::streamsize>(s.payload.size()));
  }
}

inline std::vector<Section> read_container(std::istream& in, const std::string& path) {
  expect_magic(in, path);
  std::uint16_t version = read_u16(in);
  if (version != k_format_version) {
    throw Error(ErrorCategory::k_format, "unsupported container version in " + path);
  }
  std::uint16_t marker = read_u16(in);
  if (marker != k_container_marker) {
    throw Error(ErrorCategory::k_format, path + " is a plain series, not a container");
  }
  std::uint32_t count = read_u32(in);
  std::vector<Section> sections(count);
  for (auto& s : sections) {
    std::uint32_t name_len = read_u32(in);
    s.name.resize(name_len);
    in.read(s.name.data(), name_len);
    std::uint64_t payload_len = read_u64(in);
    s.payload.resize(payload_len);
    in.read(reinterpret_cast<char*>(s.payload.data()),
            static_cast<std::streamsize>(payload_len));
  }
  if (!in) throw Error(ErrorCategory::k_format, "truncated container " + path);
  return sections;
}

}  // namespace ibss::io
