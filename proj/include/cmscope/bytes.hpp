// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cmscope {

inline uint16_t read_le16(std::span<const uint8_t> b, std::size_t off) {
  return static_cast<uint16_t>(b[off] | (static_cast<uint16_t>(b[off + 1]) << 8));
}

inline uint32_t read_le32(std::span<const uint8_t> b, std::size_t off) {
  return static_cast<uint32_t>(b[off]) | (static_cast<uint32_t>(b[off + 1]) << 8) |
         (static_cast<uint32_t>(b[off + 2]) << 16) | (static_cast<uint32_t>(b[off + 3]) << 24);
}

inline void write_le16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v & 0xFF));
  b.push_back(static_cast<uint8_t>(v >> 8));
}

inline void write_le32(std::vector<uint8_t>& b, uint32_t v) {
  write_le16(b, static_cast<uint16_t>(v & 0xFFFF));
  write_le16(b, static_cast<uint16_t>(v >> 16));
}

inline std::string hex_u32(uint32_t v) {
  char buf[12];
  std::snprintf(buf, sizeof(buf), "0x%x", v);
  return buf;
}

inline std::string hex_bytes(std::span<const uint8_t> b) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(b.size() * 2);
  for (uint8_t v : b) {
    out.push_back(digits[v >> 4]);
    out.push_back(digits[v & 0xF]);
  }
  return out;
}

inline std::optional<int> hex_nibble(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return std::nullopt;
}

inline std::optional<std::vector<uint8_t>> parse_hex_bytes(std::string_view text) {
  if (text.size() % 2) return std::nullopt;
  std::vector<uint8_t> out;
  out.reserve(text.size() / 2);
  for (std::size_t i = 0; i < text.size(); i += 2) {
    auto hi = hex_nibble(text[i]);
    auto lo = hex_nibble(text[i + 1]);
    if (!hi || !lo) return std::nullopt;
    out.push_back(static_cast<uint8_t>((*hi << 4) | *lo));
  }
  return out;
}

/// Accepts "0x..." hex or plain decimal.
inline std::optional<uint32_t> parse_u32(std::string_view s) {
  if (s.empty()) return std::nullopt;
  uint64_t v = 0;
  std::size_t i = 0;
  int radix = 10;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    radix = 16;
    i = 2;
  }
  for (; i < s.size(); ++i) {
    int d;
    if (radix == 16) {
      auto n = hex_nibble(s[i]);
      if (!n) return std::nullopt;
      d = *n;
    } else {
      if (s[i] < '0' || s[i] > '9') return std::nullopt;
      d = s[i] - '0';
    }
    v = v * radix + static_cast<uint64_t>(d);
    if (v > 0xFFFFFFFFull) return std::nullopt;
  }
  return static_cast<uint32_t>(v);
}

inline bool is_printable_ascii(uint8_t c) { return c >= 0x20 && c <= 0x7E; }

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  std::string h = to_lower(haystack), n = to_lower(needle);
  return h.find(n) != std::string::npos;
}

}  // namespace cmscope
