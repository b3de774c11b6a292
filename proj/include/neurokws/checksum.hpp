#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace nkws {

// 64-bit FNV-1a over raw bytes, printed as 16 hex digits.
inline std::uint64_t fnv1a64(std::span<const std::byte> bytes,
                             std::uint64_t h = 0xcbf29ce484222325ull) noexcept {
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view text) noexcept {
  return fnv1a64(std::as_bytes(std::span(text.data(), text.size())));
}

inline std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace nkws
