#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace utlo {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map exception class -> exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class DimensionError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class IndexError : public Error {
 public:
  using Error::Error;
};
class RangeError : public Error {
 public:
  using Error::Error;
};
class ContractError : public Error {
 public:
  using Error::Error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
// Raised when a loss goes non-finite; the CLI maps this to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// FNV-1a over raw bytes; used for seed derivation and config hashing.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t hash_u64(uint64_t h, uint64_t v) { return fnv1a(&v, sizeof(v), h); }

inline uint64_t hash_str(uint64_t h, const std::string& s) { return fnv1a(s.data(), s.size(), h); }

// Stable child-seed derivation: hash(seed, label, value-ish salts).
inline uint64_t derive_seed(uint64_t seed, const std::string& label, uint64_t salt = 0) {
  uint64_t h = hash_u64(0xcbf29ce484222325ull, seed);
  h = hash_str(h, label);
  return hash_u64(h, salt);
}

}  // namespace utlo
