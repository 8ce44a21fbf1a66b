#include "prefixgroup/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "prefixgroup/error.hpp"

namespace pg {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::f32;
  if (text == "f64") return Precision::f64;
  throw ConfigError("precision must be \"f32\" or \"f64\", got \"" + text + "\"");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (num_heads < 1) fail("num_heads must be >= 1");
  if (head_dim < 2 || head_dim % 2 != 0) fail("head_dim must be even and >= 2");
  if (ffn_dim < 1) fail("ffn_dim must be >= 1");
  if (vocab_size < 1) fail("vocab_size must be >= 1");
  if (!(rope_theta > 0.0)) fail("rope_theta must be positive");
  if (!(rms_eps > 0.0)) fail("rms_eps must be positive");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {{"num_layers", num_layers}, {"num_heads", num_heads}, {"head_dim", head_dim},
                      {"ffn_dim", ffn_dim},       {"vocab_size", vocab_size}, {"rope_theta", rope_theta},
                      {"rms_eps", rms_eps},       {"precision", to_string(precision)}, {"seed", seed}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {"num_layers", "num_heads", "head_dim", "ffn_dim",   "vocab_size",
                                              "rope_theta", "rms_eps",   "precision", "seed"};
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) throw ConfigError("unknown model config key \"" + item.key() + "\"");
  }
  ModelConfig c;
  try {
    auto count = [&](const char* key, std::size_t& field) {
      if (!j.contains(key)) return;
      const auto& v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string("model config key \"") + key + "\" must be a non-negative integer");
      }
      field = v.get<std::size_t>();
    };
    count("num_layers", c.num_layers);
    count("num_heads", c.num_heads);
    count("head_dim", c.head_dim);
    count("ffn_dim", c.ffn_dim);
    count("vocab_size", c.vocab_size);
    if (j.contains("rope_theta")) c.rope_theta = j.at("rope_theta").get<double>();
    if (j.contains("rms_eps")) c.rms_eps = j.at("rms_eps").get<double>();
    if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config has a wrongly typed value: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace pg
