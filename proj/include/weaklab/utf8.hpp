#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Annotation offsets count Unicode scalar values, not bytes. Everything that
// touches offsets goes through the decoder here so byte positions never leak
// into the document model.
//
// Decoding is total: a byte that is not part of a well-formed UTF-8 sequence
// becomes its own unit with value `invalid_byte_base + byte`. That keeps the
// unit alphabet injective (an invalid 0xC3 never compares equal to U+00C3 or
// to U+FFFD), so substring search over units is exact on arbitrary input.

namespace weaklab::utf8 {

inline constexpr std::uint32_t invalid_byte_base = 0x110000;

struct DecodedText {
  std::vector<std::uint32_t> units;
  std::vector<std::size_t> byte_offsets;  // units.size()+1 entries, last == byte length

  std::size_t size() const noexcept { return units.size(); }
};

inline DecodedText decode(std::string_view text) {
  DecodedText out;
  out.units.reserve(text.size());
  out.byte_offsets.reserve(text.size() + 1);
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    out.byte_offsets.push_back(i);
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::uint32_t cp = 0;
    std::size_t len = 0;
    if (b0 < 0x80) {
      cp = b0;
      len = 1;
    } else if (b0 >= 0xC2 && b0 <= 0xDF) {
      cp = b0 & 0x1Fu;
      len = 2;
    } else if (b0 >= 0xE0 && b0 <= 0xEF) {
      cp = b0 & 0x0Fu;
      len = 3;
    } else if (b0 >= 0xF0 && b0 <= 0xF4) {
      cp = b0 & 0x07u;
      len = 4;
    }
    bool ok = len > 0 && i + len <= n;
    if (ok) {
      for (std::size_t k = 1; k < len; ++k) {
        const auto bk = static_cast<unsigned char>(text[i + k]);
        if ((bk & 0xC0u) != 0x80u) {
          ok = false;
          break;
        }
        cp = (cp << 6) | (bk & 0x3Fu);
      }
    }
    // Reject overlong encodings, surrogates, and values past U+10FFFF.
    if (ok && len == 3 && (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF))) ok = false;
    if (ok && len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ok = false;
    if (ok) {
      out.units.push_back(cp);
      i += len;
    } else {
      out.units.push_back(invalid_byte_base + b0);
      i += 1;
    }
  }
  out.byte_offsets.push_back(n);
  return out;
}

/// Number of scalar-value units in `text`.
inline std::size_t length(std::string_view text) { return decode(text).units.size(); }

/// Substring by unit offsets [begin, end) against a prebuilt decode.
inline std::string_view substr(std::string_view text, const DecodedText& decoded,
                               std::size_t begin, std::size_t end) {
  if (begin > end || end > decoded.units.size())
    throw std::out_of_range("utf8::substr: unit range out of bounds");
  const std::size_t b = decoded.byte_offsets[begin];
  const std::size_t e = decoded.byte_offsets[end];
  return text.substr(b, e - b);
}

inline std::string substr(std::string_view text, std::size_t begin, std::size_t end) {
  return std::string(substr(text, decode(text), begin, end));
}

}  // namespace weaklab::utf8
