#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace pg {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& text);

// Decoder hyperparameters. hidden() == num_heads * head_dim.
//
// Config files are JSON objects whose keys mirror the fields below, e.g.
//   {"num_layers": 2, "num_heads": 2, "head_dim": 8, "ffn_dim": 32,
//    "vocab_size": 64, "rope_theta": 10000, "precision": "f64", "seed": 1}
// Omitted keys keep their defaults; unknown keys are rejected.
struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t num_heads = 2;
  std::size_t head_dim = 8;
  std::size_t ffn_dim = 32;
  std::size_t vocab_size = 32;
  double rope_theta = 10000.0;
  double rms_eps = 1e-6;
  Precision precision = Precision::f64;
  std::uint64_t seed = 0;

  std::size_t hidden() const { return num_heads * head_dim; }

  // Throws ConfigError on any violated constraint.
  void validate() const;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  // Throws IoError naming the path when the file cannot be read.
  static ModelConfig load(const std::filesystem::path& path);

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace pg
