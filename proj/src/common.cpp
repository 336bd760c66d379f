// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/common.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace gea {

std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::uint64_t RandomSource::uniform_int(std::uint64_t n) {
  if (n == 0) throw ValidationError("uniform_int: n must be positive");
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double RandomSource::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

std::string RandomSource::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

RandomSource RandomSource::deserialize(const std::string& text) {
  RandomSource rs(0);
  std::istringstream is(text);
  is >> rs.engine_;
  if (is.fail()) throw IoError("RandomSource: malformed serialized state");
  return rs;
}

namespace {
constexpr char kB64Chars[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}
}  // namespace

std::string base64_encode(const std::vector<unsigned char>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  while (i + 3 <= data.size()) {
    std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                      (static_cast<std::uint32_t>(data[i + 1]) << 8) |
                      data[i + 2];
    out.push_back(kB64Chars[(v >> 18) & 0x3f]);
    out.push_back(kB64Chars[(v >> 12) & 0x3f]);
    out.push_back(kB64Chars[(v >> 6) & 0x3f]);
    out.push_back(kB64Chars[v & 0x3f]);
    i += 3;
  }
  const size_t rem = data.size() - i;
  if (rem == 1) {
    std::uint32_t v = static_cast<std::uint32_t>(data[i]) << 16;
    out.push_back(kB64Chars[(v >> 18) & 0x3f]);
    out.push_back(kB64Chars[(v >> 12) & 0x3f]);
    out += "==";
  } else if (rem == 2) {
    std::uint32_t v = (static_cast<std::uint32_t>(data[i]) << 16) |
                      (static_cast<std::uint32_t>(data[i + 1]) << 8);
    out.push_back(kB64Chars[(v >> 18) & 0x3f]);
    out.push_back(kB64Chars[(v >> 12) & 0x3f]);
    out.push_back(kB64Chars[(v >> 6) & 0x3f]);
    out.push_back('=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0)
    throw IoError("base64: length must be a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw IoError("base64: bad padding");
        vals[k] = 0;
        ++pad;
      } else {
        if (pad > 0) throw IoError("base64: data after padding");
        vals[k] = b64_value(c);
        if (vals[k] < 0) throw IoError("base64: invalid character");
      }
    }
    std::uint32_t v = (static_cast<std::uint32_t>(vals[0]) << 18) |
                      (static_cast<std::uint32_t>(vals[1]) << 12) |
                      (static_cast<std::uint32_t>(vals[2]) << 6) |
                      static_cast<std::uint32_t>(vals[3]);
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 0xff));
  }
  return out;
}

}  // namespace gea
