#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace clinalign {

inline constexpr std::string_view kVersion = "0.3.0";

// Tolerance for "exact" equality checks on derived reals.
inline constexpr double kEqualityTolerance = 1e-9;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input files.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Encoder-space or model-role mismatch.
class BindingError : public Error {
 public:
  using Error::Error;
};

// A quantity that is mathematically undefined for the given input
// (zero-norm vector, zero-variance sample, ...).
class UndefinedError : public Error {
 public:
  using Error::Error;
};

// Transient failure of an external process; the caller may retry.
class RetriableError : public Error {
 public:
  using Error::Error;
};

using Vector = std::vector<double>;

// Shortest text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// FNV-1a over raw bytes; used for content hashes and seed derivation.
inline std::uint64_t fnv1a(const void* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace clinalign
