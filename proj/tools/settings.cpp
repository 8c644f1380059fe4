#include "settings.hpp"

#include "tvdb/errors.hpp"
#include "tvdb/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace tvdb::cli {

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", KeyType::Seed, "0", "seed for every random draw of the run"},
      // bridge and textualization
      {"T", KeyType::Int, "50", "bridge steps"},
      {"N", KeyType::Int, "50", "textualization epochs"},
      {"w", KeyType::Real, "7.5", "guidance scale"},
      {"tau", KeyType::Real, "0.7", "attention injection threshold"},
      {"gamma", KeyType::Real, "0.001", "embedding learning rate"},
      {"y", KeyType::Int, "4", "learnable token count"},
      {"beta_temperature", KeyType::Real, "1", "time-aware loss scaling temperature"},
      {"renormalize_rows", KeyType::Bool, "true", "renormalize merged attention rows"},
      {"tau_clock", KeyType::Text, "normalized", "tau compares against t/T (normalized) or t (raw)"},
      {"guidance_in_inversion", KeyType::Bool, "true", "use guidance scale w while inverting"},
      {"inject_cross", KeyType::Bool, "true", "inject cross-attention maps"},
      {"inject_self", KeyType::Bool, "true", "inject self-attention maps"},
      {"post_update_advance", KeyType::Bool, "true", "advance with the refreshed prediction"},
      {"raw_beta", KeyType::Bool, "false", "beta exponent over diffusion time"},
      {"attention_control", KeyType::Bool, "true", "attention injection during training and editing"},
      {"init", KeyType::Text, "gaussian", "embedding initialisation: gaussian or descriptor"},
      {"intensity", KeyType::Real, "1", "cross-attention weight of learned tokens"},
      {"allow_hash_mismatch", KeyType::Bool, "false", "accept embeddings learned on other weights"},
      {"stamp_time", KeyType::Bool, "false", "record wall-clock creation time in embedding files"},
      // denoiser training
      {"epochs", KeyType::Int, "40", "denoiser training epochs"},
      {"batch_size", KeyType::Int, "8", "denoiser minibatch size"},
      {"learning_rate", KeyType::Real, "0.002", "denoiser peak learning rate"},
      {"label_dropout", KeyType::Real, "0.15", "probability of training on the null label"},
      {"corpus_seed", KeyType::Seed, "7", "training corpus seed"},
      {"corpus_size", KeyType::Int, "480", "training corpus size"},
      {"embed_dim", KeyType::Int, "64", "token embedding width d"},
      {"token_capacity", KeyType::Int, "8", "token count k"},
      {"train_steps", KeyType::Int, "200", "training schedule length"},
      {"alpha_bar_end", KeyType::Real, "0.02", "final cumulative signal level"},
      // datasets and evaluation
      {"n_train", KeyType::Int, "1", "visual prompt pairs"},
      {"n_test", KeyType::Int, "10", "held-out test images"},
      {"transform", KeyType::Text, "color-shift:0.2,0.2,0.2", "ground-truth transformation"},
      {"providers", KeyType::Text, "identity", "comma-separated feature providers"},
  };
  return keys;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
    return true;
  }
  return false;
}

template <typename T>
bool parse_number(const std::string& v, T& out) {
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && p == end;
}

bool valid(KeyType type, const std::string& v) {
  switch (type) {
    case KeyType::Int: {
      long long x;
      return parse_number(v, x);
    }
    case KeyType::Seed: {
      std::uint64_t x;
      return parse_number(v, x);
    }
    case KeyType::Real: {
      double x;
      return parse_number(v, x);
    }
    case KeyType::Bool: {
      bool x;
      return parse_bool(v, x);
    }
    case KeyType::Text:
      return true;
  }
  return false;
}

std::string json_scalar(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  return j.dump();
}

}  // namespace

Settings::Settings() {
  for (const auto& k : schema()) values_[k.name] = k.fallback;
}

const KeySpec& Settings::spec(const std::string& key) const {
  for (const auto& k : schema()) {
    if (k.name == key) return k;
  }
  throw ConfigError("unknown config key: " + key);
}

void Settings::set(const std::string& key, const std::string& value) {
  const KeySpec& s = spec(key);
  if (!valid(s.type, value)) throw ConfigError("config key '" + key + "': invalid value '" + value + "'");
  values_[key] = value;
}

void Settings::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("config file not found: " + path.string());
  std::vector<std::string> problems;
  auto apply = [&](const std::string& key, const std::string& value) {
    try {
      set(key, value);
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
  };
  if (path.extension() == ".json") {
    const Bytes raw = read_file(path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    const nlohmann::json& settings = j.contains("settings") ? j["settings"] : j;
    for (const auto& [k, v] : settings.items()) apply(k, json_scalar(v));
  } else {
    std::ifstream in(path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        problems.push_back(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
        continue;
      }
      apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid config " + path.string() + ":";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
}

long long Settings::integer(const std::string& key) const {
  long long x = 0;
  parse_number(values_.at(key), x);
  return x;
}

std::uint64_t Settings::seed(const std::string& key) const {
  std::uint64_t x = 0;
  parse_number(values_.at(key), x);
  return x;
}

double Settings::real(const std::string& key) const {
  double x = 0;
  parse_number(values_.at(key), x);
  return x;
}

bool Settings::flag(const std::string& key) const {
  bool x = false;
  parse_bool(values_.at(key), x);
  return x;
}

const std::string& Settings::text(const std::string& key) const { return values_.at(key); }

nlohmann::json Settings::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : schema()) {
    switch (k.type) {
      case KeyType::Int: j[k.name] = integer(k.name); break;
      case KeyType::Seed: j[k.name] = seed(k.name); break;
      case KeyType::Real: j[k.name] = real(k.name); break;
      case KeyType::Bool: j[k.name] = flag(k.name); break;
      case KeyType::Text: j[k.name] = text(k.name); break;
    }
  }
  return j;
}

BridgeConfig Settings::bridge() const {
  BridgeConfig c;
  c.steps = static_cast<int>(integer("T"));
  c.epochs = static_cast<int>(integer("N"));
  c.guidance = real("w");
  c.tau = real("tau");
  c.learning_rate = real("gamma");
  c.learnable = static_cast<int>(integer("y"));
  c.beta_temperature = real("beta_temperature");
  c.renormalize_rows = flag("renormalize_rows");
  c.seed = seed("seed");
  c.guidance_in_inversion = flag("guidance_in_inversion");
  const std::string& clock = text("tau_clock");
  if (clock != "normalized" && clock != "raw") throw ConfigError("tau_clock must be 'normalized' or 'raw'");
  c.clock = clock == "raw" ? InjectionClock::RawIndex : InjectionClock::Normalized;
  c.inject_cross = flag("inject_cross");
  c.inject_self = flag("inject_self");
  c.post_update_advance = flag("post_update_advance");
  c.raw_beta = flag("raw_beta");
  c.attention_control = flag("attention_control");
  c.validate();
  return c;
}

DenoiserConfig Settings::denoiser() const {
  DenoiserConfig c;
  c.embed_dim = static_cast<int>(integer("embed_dim"));
  c.token_capacity = static_cast<int>(integer("token_capacity"));
  c.train_steps = static_cast<int>(integer("train_steps"));
  c.alpha_bar_end = real("alpha_bar_end");
  c.vocab_size = Vocabulary::size();
  return c;
}

TrainDenoiserOptions Settings::training() const {
  TrainDenoiserOptions o;
  o.epochs = static_cast<int>(integer("epochs"));
  o.batch_size = static_cast<int>(integer("batch_size"));
  o.learning_rate = real("learning_rate");
  o.label_dropout = real("label_dropout");
  o.seed = seed("seed");
  return o;
}

CorpusSpec Settings::corpus() const {
  CorpusSpec s;
  s.seed = seed("corpus_seed");
  s.size = static_cast<int>(integer("corpus_size"));
  return s;
}

TransformSpec Settings::transform() const { return parse_transform(text("transform")); }

TransformSpec parse_transform(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string args = colon == std::string::npos ? "" : text.substr(colon + 1);
  auto numbers = [&](const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      double v;
      if (!parse_number(trim(item), v)) throw ConfigError("transform '" + text + "': bad number '" + item + "'");
      out.push_back(v);
    }
    return out;
  };
  auto expect = [&](const std::vector<double>& v, std::size_t n) {
    if (v.size() != n) throw ConfigError("transform '" + text + "': expected " + std::to_string(n) + " values");
    return v;
  };
  if (kind == "tone-curve") return TransformSpec::tone_curve(expect(numbers(args), 1)[0]);
  if (kind == "color-shift") {
    const auto v = expect(numbers(args), 3);
    return TransformSpec::color_shift({v[0], v[1], v[2]});
  }
  if (kind == "desaturate") return TransformSpec::desaturate(expect(numbers(args), 1)[0]);
  if (kind == "invert-luma") return TransformSpec::invert_luma();
  if (kind == "blur") {
    const auto second = args.find(':');
    if (second == std::string::npos) return TransformSpec::box_blur(static_cast<int>(expect(numbers(args), 1)[0]));
    const auto k = expect(numbers(args.substr(0, second)), 9);
    const int iters = static_cast<int>(expect(numbers(args.substr(second + 1)), 1)[0]);
    std::array<double, 9> kernel;
    std::copy(k.begin(), k.end(), kernel.begin());
    return TransformSpec::blur(kernel, iters);
  }
  throw ConfigError("unknown transform '" + text + "'");
}

}  // namespace tvdb::cli
