// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gea {

// Error taxonomy mirrored by the CLI exit codes: validation -> 2,
// numeric -> 3, I/O -> 4.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used for the desk tokenizer and for config digests.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

// splitmix64, used to derive independent stream seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  return splitmix64(s);
}

std::string to_hex(std::uint64_t v);

// Deterministic random source. The engine's output sequence is standardized;
// the distributions are fixed algorithms (not the implementation-defined
// std:: ones) so streams replay identically. normal() consumes exactly two
// engine draws, which keeps the state serializable without carry-over.
class RandomSource {
public:
  explicit RandomSource(std::uint64_t seed) : engine_(seed) {}

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (cosine branch only).
  double normal();

  std::string serialize() const;
  static RandomSource deserialize(const std::string& text);

  bool operator==(const RandomSource& other) const {
    return engine_ == other.engine_;
  }

private:
  std::mt19937_64 engine_;
};

std::string base64_encode(const std::vector<unsigned char>& data);
std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace gea
