#include "cerberus/gate.hpp"

#include "cerberus/kernels.hpp"

namespace cerberus {

GateSource gate_source_from_string(const std::string& s) {
  if (s == "hidden") return GateSource::Hidden;
  if (s == "logits") return GateSource::Logits;
  throw ConfigError("unknown gate source: " + s);
}

std::string to_string(GateSource s) {
  return s == GateSource::Hidden ? "hidden" : "logits";
}

std::string to_string(Route r) {
  return r == Route::Autoregressive ? "autoregressive" : "parallel";
}

double entropy(std::span<const float> v) {
  check_shape(!v.empty(), "entropy expects a non-empty vector");
  return kern::entropy_bits(v.data(), int(v.size()));
}

GateDecision decide(const GateConfig& cfg, std::span<const float> h_last,
                    std::span<const float> logits) {
  GateDecision d;
  d.entropy =
      entropy(cfg.source == GateSource::Hidden ? h_last : logits);
  if (cfg.enabled && d.entropy > cfg.threshold)
    d.route = Route::Autoregressive;
  else
    d.route = Route::Parallel;
  return d;
}

}  // namespace cerberus
