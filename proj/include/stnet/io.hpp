#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "stnet/error.hpp"

namespace stnet::io {

using nlohmann::json;

template <typename T>
T byteswap_value(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
  std::memcpy(&v, b, sizeof(T));
  return v;
}

// Raw little-endian array I/O.
template <typename T>
void write_le(std::ostream& os, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (T v : values) {
      const T s = byteswap_value(v);
      os.write(reinterpret_cast<const char*>(&s), sizeof(T));
    }
  }
  if (!os) throw Error("write failed");
}

template <typename T>
std::vector<T> read_le(std::istream& is, std::size_t count) {
  std::vector<T> out(count);
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(is.gcount()) != count * sizeof(T)) {
    throw ValidationError("truncated binary data: expected " + std::to_string(count * sizeof(T)) + " bytes");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : out) v = byteswap_value(v);
  }
  return out;
}

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& value);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace stnet::io
