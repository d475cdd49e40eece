#include "cerberus/config.hpp"

#include <fstream>

#include "cerberus/common.hpp"

namespace cerberus {

const std::vector<RunConfig::KeySpec>& RunConfig::registry() {
  using T = Type;
  static const std::vector<KeySpec> keys = {
      {"seed", T::Int, std::int64_t(42), "global PRNG seed"},
      {"out_dir", T::String, std::string("out"), "output directory"},

      {"model.vocab_size", T::Int, std::int64_t(256), "vocabulary size"},
      {"model.d_model", T::Int, std::int64_t(128), "hidden width"},
      {"model.n_layers", T::Int, std::int64_t(4), "transformer layers"},
      {"model.n_attn_heads", T::Int, std::int64_t(4), "attention heads"},
      {"model.max_context", T::Int, std::int64_t(512), "context length"},
      {"model.ffn_mult", T::Int, std::int64_t(4), "feed-forward width / d"},

      {"heads.count", T::Int, std::int64_t(4), "decoding heads"},
      {"heads.resblocks", T::Int, std::int64_t(4), "resblocks per head"},
      {"heads.special_pos", T::Int, std::int64_t(1),
       "depth of the two-input block (sequential paradigm)"},
      {"heads.resblock_variant", T::String, std::string("paper"),
       "resblock form: paper (activation outside the residual sum) or "
       "canonical (residual outside the activation)"},
      {"heads.threads", T::Int, std::int64_t(1),
       "worker threads per wavefront step"},

      {"gate.enabled", T::Bool, true, "entropy gate on/off"},
      {"gate.threshold", T::Double, 0.59,
       "entropy threshold in bits (reference value; calibrate per model)"},
      {"gate.source", T::String, std::string("hidden"),
       "entropy source: hidden | logits"},

      {"tree.top_k", T::Int, std::int64_t(10), "candidates per head"},
      {"tree.paths", T::Int, std::int64_t(63), "verified path budget"},
      {"tree.template_file", T::String, std::string(""),
       "template JSON (overrides tree.paths)"},

      {"train.lr", T::Double, 4e-4, "Adam learning rate"},
      {"train.batch", T::Int, std::int64_t(8), "windows per step"},
      {"train.steps", T::Int, std::int64_t(2000), "optimizer steps"},
      {"train.seq_len", T::Int, std::int64_t(128), "training window length"},
      {"train.eval_fraction", T::Double, 0.1, "corpus tail held out"},
      {"train.warmup", T::Int, std::int64_t(100), "linear warmup steps"},
      {"train.min_lr_frac", T::Double, 0.1, "cosine decay floor"},
      {"train.lambda_decay", T::Double, 0.8,
       "geometric per-head loss weight decay"},
      {"train.eval_windows", T::Int, std::int64_t(32), "held-out windows"},
      {"train.log_every", T::Int, std::int64_t(100), "log cadence"},

      {"decode.paradigm", T::String, std::string("cerberus"),
       "vanilla | medusa | cerberus"},
      {"decode.max_tokens", T::Int, std::int64_t(128), "tokens to emit"},
      {"decode.stop_token", T::Int, std::int64_t(-1), "stop byte (-1: none)"},
      {"decode.begin_token", T::Int, std::int64_t(10),
       "byte used when the prompt is empty"},

      {"bench.max_tokens", T::Int, std::int64_t(64), "tokens per prompt"},
      {"bench.tree_paths", T::String, std::string("63,120,150"),
       "comma-separated path budgets"},
      {"bench.threads", T::Int, std::int64_t(1), "parallel prompt sessions"},

      {"calibrate.grid_points", T::Int, std::int64_t(32),
       "thresholds tried across [0, log2 K]"},
      {"calibrate.max_tokens", T::Int, std::int64_t(48),
       "tokens per calibration prompt"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : registry()) values_[k.name] = k.def;
}

const RunConfig::KeySpec& RunConfig::spec_for(const std::string& key) const {
  for (const auto& k : registry())
    if (key == k.name) return k;
  throw ConfigError("unknown config key: " + key);
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  load_json(j);
}

void RunConfig::load_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& spec = spec_for(it.key());
    const auto& v = it.value();
    try {
      switch (spec.type) {
        case Type::Bool:
          values_[it.key()] = v.get<bool>();
          break;
        case Type::Int:
          values_[it.key()] = v.get<std::int64_t>();
          break;
        case Type::Double:
          values_[it.key()] = v.get<double>();
          break;
        case Type::String:
          values_[it.key()] = v.get<std::string>();
          break;
      }
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + it.key() + "' has the wrong type");
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& text) {
  const auto& spec = spec_for(key);
  try {
    switch (spec.type) {
      case Type::Bool:
        if (text == "true" || text == "1")
          values_[key] = true;
        else if (text == "false" || text == "0")
          values_[key] = false;
        else
          throw ConfigError("expected true/false for " + key);
        break;
      case Type::Int:
        values_[key] = std::int64_t(std::stoll(text));
        break;
      case Type::Double:
        values_[key] = std::stod(text);
        break;
      case Type::String:
        values_[key] = text;
        break;
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse value '" + text + "' for key " + key);
  } catch (const std::out_of_range&) {
    throw ConfigError("value out of range for key " + key);
  }
}

void RunConfig::set_value(const std::string& key, Value v) {
  spec_for(key);
  values_[key] = std::move(v);
}

bool RunConfig::get_bool(const std::string& key) const {
  return std::get<bool>(values_.at(key));
}
std::int64_t RunConfig::get_int(const std::string& key) const {
  return std::get<std::int64_t>(values_.at(key));
}
double RunConfig::get_double(const std::string& key) const {
  return std::get<double>(values_.at(key));
}
const std::string& RunConfig::get_string(const std::string& key) const {
  return std::get<std::string>(values_.at(key));
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) {
    std::visit([&](const auto& x) { j[k] = x; }, v);
  }
  return j;
}

}  // namespace cerberus
