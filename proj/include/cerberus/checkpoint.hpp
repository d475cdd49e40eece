#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cerberus/tensor.hpp"

namespace cerberus {

// Checkpoint container for the shared on-disk format:
//
//   magic "CRBS" | u32 version | u64 header_len | header JSON | payload
//
// The header JSON carries {"kind", "config", "tensors": {name -> {shape,
// offset}}}; offsets are byte positions into the payload, which is raw
// little-endian float32. Round-trips are bit-exact.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;       // "backbone" | "heads"
  nlohmann::json config;  // module config, free-form
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order

  void add(const std::string& name, const Tensor& t) {
    tensors.emplace_back(name, t);
  }
  bool has(const std::string& name) const;
  const Tensor& get(const std::string& name) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace cerberus
