#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace sdkd {

// Flat key/value configuration with dotted keys ("train.method"). Nested JSON
// objects are flattened on load, so {"train": {"k": 10}} and {"train.k": 10}
// are equivalent. Unknown keys are rejected with ConfigError.
class Config {
 public:
  Config() = default;

  static Config from_json(const nlohmann::json& j);
  static Config from_file(const std::filesystem::path& path);
  static const std::vector<std::string>& known_keys();

  // Throws ConfigError for unknown keys.
  void set(const std::string& key, nlohmann::json value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const nlohmann::json* find(const std::string& key) const;

  // Throws ConfigError when the stored value has the wrong type.
  template <typename T>
  T get(const std::string& key, T fallback) const {
    const nlohmann::json* v = find(key);
    if (v == nullptr) return fallback;
    try {
      return v->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw_type_error(key, e.what());
    }
  }

  nlohmann::json to_json() const;

 private:
  [[noreturn]] static void throw_type_error(const std::string& key, const std::string& what);

  std::map<std::string, nlohmann::json> values_;
};

}  // namespace sdkd
