#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace cerberus {

// Merged run configuration: defaults < config file < command-line flags.
// Every key is declared in the registry below; unknown keys are rejected
// at load time.
class RunConfig {
 public:
  using Value = std::variant<bool, std::int64_t, double, std::string>;

  enum class Type { Bool, Int, Double, String };
  struct KeySpec {
    const char* name;
    Type type;
    Value def;
    const char* help;
  };

  RunConfig();

  static const std::vector<KeySpec>& registry();

  // Flat JSON object with dotted keys, e.g. {"gate.threshold": 0.25}.
  void load_file(const std::string& path);
  void load_json(const nlohmann::json& j);

  // Flag-style override; the string is parsed per the key's declared type.
  void set(const std::string& key, const std::string& text);
  void set_value(const std::string& key, Value v);

  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;

  nlohmann::json to_json() const;

 private:
  const KeySpec& spec_for(const std::string& key) const;
  std::map<std::string, Value> values_;
};

}  // namespace cerberus
