#pragma once

#include "poseforge/datagen.hpp"
#include "poseforge/model.hpp"
#include "poseforge/render.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace poseforge {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(const std::string& data);

struct TrainConfig;

/// Layered configuration: built-in defaults, then an optional JSON file,
/// then `key.path=value` overrides. Unknown keys are rejected at every layer.
class GlobalConfig {
 public:
  GlobalConfig();

  static nlohmann::json defaults();

  /// Deep-merges `overlay` into the current document.
  void merge(const nlohmann::json& overlay, const std::string& origin);
  void merge_file(const std::filesystem::path& path);
  /// `assignment` is "a.b.c=value"; value is parsed as JSON when it parses,
  /// otherwise taken as a string.
  void set(const std::string& assignment);

  const nlohmann::json& doc() const { return doc_; }
  /// Canonical serialization (sorted keys) and its digest.
  std::string dump() const { return doc_.dump(2); }
  std::string sha256() const { return sha256_hex(doc_.dump()); }

  RenderConfig render() const;
  PoseNetworkConfig network() const;
  DatagenConfig datagen() const;
  TrainConfig training() const;
  std::uint64_t seed() const;

 private:
  nlohmann::json doc_;
};

/// Thrown for malformed or unknown configuration entries.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace poseforge
