#include "sdkd/config.hpp"

#include <algorithm>
#include <fstream>

#include "sdkd/errors.hpp"

namespace sdkd {

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      "data.kind", "data.n_classes", "data.samples_per_class", "data.dim", "data.center_scale",
      "data.noise_sigma", "data.seed", "data.train_images", "data.train_labels",
      "data.test_images", "data.test_labels", "data.train_csv", "data.test_csv",
      "data.label_column",
      "teacher.hidden", "teacher.activation", "teacher.init_scale", "teacher.epochs",
      "teacher.batch_size", "teacher.optimizer", "teacher.lr", "teacher.checkpoint",
      "student.hidden", "student.activation", "student.init_scale",
      "train.method", "train.k", "train.temperature", "train.lambda", "train.epochs",
      "train.batch_size", "train.optimizer", "train.lr", "train.beta1", "train.beta2",
      "train.eps", "train.momentum", "train.decay", "train.seed", "train.teacher_floor",
      "train.track_loss", "train.soft_labels",
      "mixture.mu1", "mixture.b1", "mixture.mu2", "mixture.b2_init", "mixture.b2_final",
      "mixture.bins", "mixture.scale_units", "mixture.schedule_steps",
      "grid.cells", "grid.seeds", "grid.jobs",
      "bench.n_classes", "bench.dim", "bench.batch", "bench.k", "bench.methods",
      "bench.warmup", "bench.iters", "bench.seed", "bench.hidden",
      "out"};
  return keys;
}

namespace {

void flatten(const nlohmann::json& j, const std::string& prefix, Config& cfg) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    const auto& known = Config::known_keys();
    const bool is_leaf = std::find(known.begin(), known.end(), key) != known.end();
    if (it->is_object() && !is_leaf)
      flatten(*it, key, cfg);
    else
      cfg.set(key, *it);
  }
}

}  // namespace

Config Config::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  Config cfg;
  flatten(j, "", cfg);
  return cfg;
}

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void Config::set(const std::string& key, nlohmann::json value) {
  const auto& known = known_keys();
  if (std::find(known.begin(), known.end(), key) == known.end())
    throw ConfigError("unknown config key '" + key + "'");
  values_[key] = std::move(value);
}

const nlohmann::json* Config::find(const std::string& key) const {
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

void Config::throw_type_error(const std::string& key, const std::string& what) {
  throw ConfigError("config key '" + key + "' has the wrong type: " + what);
}

}  // namespace sdkd
