#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cerberus {

// Error taxonomy. The CLI maps these onto process exit codes
// (ConfigError -> 2, IoError -> 3, everything else -> 1).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

// Runtime switch for the post-op NaN/Inf scans. On by default in debug
// builds; tests flip it on explicitly in release builds.
struct DebugChecks {
  static bool& enabled() {
#ifndef NDEBUG
    static bool on = true;
#else
    static bool on = false;
#endif
    return on;
  }
};

// FNV-1a over raw bytes; used for corpus identity and frozen-weight checks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace cerberus
