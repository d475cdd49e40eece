#pragma once

#include <limits>
#include <span>
#include <string>

#include "cerberus/common.hpp"

namespace cerberus {

enum class GateSource { Hidden, Logits };
enum class Route { Autoregressive, Parallel };

GateSource gate_source_from_string(const std::string& s);
std::string to_string(GateSource s);
std::string to_string(Route r);

// Per-step routing policy: entropy above the threshold means the model is
// not confident enough for a parallel step. The entropy is Shannon entropy
// in bits of the softmax of either the last hidden state (the literal
// per-step workflow) or the LM-head logits (the token distribution).
struct GateConfig {
  bool enabled = true;
  double threshold = 0.59;  // bits
  GateSource source = GateSource::Hidden;

  void validate() const {
    if (enabled && threshold < 0.0)
      throw ConfigError("gate.threshold must be non-negative");
  }
};

struct GateDecision {
  double entropy = 0.0;  // bits, from the configured source
  Route route = Route::Parallel;
};

// Softmax + Shannon entropy (base 2); result in [0, log2 K].
double entropy(std::span<const float> v);

// Strict inequality routes to auto-regressive; ties take the parallel
// branch. A disabled gate always routes parallel (entropy still reported).
GateDecision decide(const GateConfig& cfg, std::span<const float> h_last,
                    std::span<const float> logits);

}  // namespace cerberus
