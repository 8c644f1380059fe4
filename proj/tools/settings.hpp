#pragma once

// Flat key=value run settings with a typed schema. Files hold "key = value"
// lines ('#' starts a comment); a resolved-config.json written by an earlier
// run is accepted as well.

#include "tvdb/bridge.hpp"
#include "tvdb/denoiser.hpp"
#include "tvdb/toydata.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tvdb::cli {

enum class KeyType { Int, Real, Bool, Text, Seed };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string fallback;
  std::string help;
};

const std::vector<KeySpec>& schema();

class Settings {
 public:
  Settings();

  // Throws ConfigError listing every unknown key or badly typed value.
  void load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  long long integer(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  const std::string& text(const std::string& key) const;

  nlohmann::json to_json() const;

  BridgeConfig bridge() const;
  DenoiserConfig denoiser() const;
  TrainDenoiserOptions training() const;
  CorpusSpec corpus() const;
  TransformSpec transform() const;

 private:
  const KeySpec& spec(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

// "tone-curve:G", "color-shift:R,G,B", "desaturate:F", "blur:ITER", "blur:K0,...,K8:ITER", "invert-luma".
TransformSpec parse_transform(const std::string& text);

}  // namespace tvdb::cli
