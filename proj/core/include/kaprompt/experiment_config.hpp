#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "kaprompt/backbone.hpp"
#include "kaprompt/training.hpp"

namespace kaprompt {

enum class Method { KaPrompt, BaselineIndependent };

std::string method_name(Method m);
Method parse_method(const std::string& name);

struct DataConfig {
  std::size_t num_domains = 4;       // T
  std::size_t num_classes = 5;       // C
  std::size_t train_samples = 200;   // first domain; later domains shrink
  std::size_t train_decrement = 10;  // per-domain reduction of train_samples
  std::size_t test_samples = 100;
  double noise_min = 0.3;            // sigma of the first domain
  double noise_max = 0.6;            // sigma of the last domain
  double scale_min = 0.8;
  double scale_max = 1.25;
  double rotation_strength = 0.5;    // 0 gives the identity rotation
  double class_separation = 1.0;     // stddev of the class-mean entries
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  TrainConfig train;
  BackboneConfig backbone;
  DataConfig data;
  std::size_t prompts_per_domain = 10;  // N_p
  std::size_t prompt_length = 4;        // L_p
  Method method = Method::KaPrompt;
  std::string output_dir;

  void validate() const;
};

// Flat JSON object; every key optional, unknown keys raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

// --seed: one value drives training, backbone and data streams.
void apply_seed(ExperimentConfig& c, std::uint64_t seed);

}  // namespace kaprompt
