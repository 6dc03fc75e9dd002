#include "kaprompt/experiment_config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "kaprompt/errors.hpp"

namespace kaprompt {

std::string method_name(Method m) {
  return m == Method::KaPrompt ? "ka_prompt" : "baseline_independent";
}

Method parse_method(const std::string& name) {
  if (name == "ka_prompt") return Method::KaPrompt;
  if (name == "baseline_independent") return Method::BaselineIndependent;
  throw ConfigError("config: unknown method '" + name +
                    "' (expected ka_prompt or baseline_independent)");
}

void ExperimentConfig::validate() const {
  train.validate();
  if (data.num_domains == 0) throw ConfigError("config: num_domains must be at least 1");
  if (data.num_classes < 2) throw ConfigError("config: num_classes must be at least 2");
  if (data.test_samples == 0) throw ConfigError("config: test_samples must be positive");
  const std::size_t reduction = data.train_decrement * (data.num_domains - 1);
  if (data.train_samples <= reduction ||
      data.train_samples - reduction < data.num_classes) {
    throw ConfigError("config: the last domain would have fewer train samples than classes");
  }
  if (data.noise_min < 0.0 || data.noise_max < data.noise_min) {
    throw ConfigError("config: need 0 <= noise_min <= noise_max");
  }
  if (data.scale_min <= 0.0 || data.scale_max < data.scale_min) {
    throw ConfigError("config: need 0 < scale_min <= scale_max");
  }
  if (data.rotation_strength < 0.0) throw ConfigError("config: rotation_strength must be >= 0");
  if (prompts_per_domain == 0 || prompt_length == 0) {
    throw ConfigError("config: prompts_per_domain and prompt_length must be positive");
  }
  if (train.top_k > prompts_per_domain) {
    throw ConfigError("config: top_k exceeds prompts_per_domain");
  }
  if (backbone.dim % backbone.num_heads != 0) {
    throw ConfigError("config: dim must be divisible by num_heads");
  }
}

namespace {

template <typename T>
std::function<void(const nlohmann::json&)> setter(T& field) {
  return [&field](const nlohmann::json& v) { field = v.get<T>(); };
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  std::string method = method_name(c.method);
  const std::map<std::string, std::function<void(const nlohmann::json&)>> fields = {
      {"tau", setter(c.train.tau)},
      {"lambda", setter(c.train.lambda)},
      {"top_k", setter(c.train.top_k)},
      {"epochs", setter(c.train.epochs)},
      {"batch_size", setter(c.train.batch_size)},
      {"learning_rate", setter(c.train.learning_rate)},
      {"key_loss_weight", setter(c.train.key_loss_weight)},
      {"seed", setter(c.train.seed)},
      {"dim", setter(c.backbone.dim)},
      {"num_patches", setter(c.backbone.num_patches)},
      {"patch_dim", setter(c.backbone.patch_dim)},
      {"num_blocks", setter(c.backbone.num_blocks)},
      {"num_heads", setter(c.backbone.num_heads)},
      {"ffn_dim", setter(c.backbone.ffn_dim)},
      {"backbone_seed", setter(c.backbone.seed)},
      {"num_domains", setter(c.data.num_domains)},
      {"num_classes", setter(c.data.num_classes)},
      {"train_samples", setter(c.data.train_samples)},
      {"train_decrement", setter(c.data.train_decrement)},
      {"test_samples", setter(c.data.test_samples)},
      {"noise_min", setter(c.data.noise_min)},
      {"noise_max", setter(c.data.noise_max)},
      {"scale_min", setter(c.data.scale_min)},
      {"scale_max", setter(c.data.scale_max)},
      {"rotation_strength", setter(c.data.rotation_strength)},
      {"class_separation", setter(c.data.class_separation)},
      {"data_seed", setter(c.data.seed)},
      {"prompts_per_domain", setter(c.prompts_per_domain)},
      {"prompt_length", setter(c.prompt_length)},
      {"method", setter(method)},
      {"output_dir", setter(c.output_dir)},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: key '" + key + "' has the wrong type");
    }
  }
  c.method = parse_method(method);
  c.validate();
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {{"tau", c.train.tau},
          {"lambda", c.train.lambda},
          {"top_k", c.train.top_k},
          {"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"learning_rate", c.train.learning_rate},
          {"key_loss_weight", c.train.key_loss_weight},
          {"seed", c.train.seed},
          {"dim", c.backbone.dim},
          {"num_patches", c.backbone.num_patches},
          {"patch_dim", c.backbone.patch_dim},
          {"num_blocks", c.backbone.num_blocks},
          {"num_heads", c.backbone.num_heads},
          {"ffn_dim", c.backbone.ffn_dim},
          {"backbone_seed", c.backbone.seed},
          {"num_domains", c.data.num_domains},
          {"num_classes", c.data.num_classes},
          {"train_samples", c.data.train_samples},
          {"train_decrement", c.data.train_decrement},
          {"test_samples", c.data.test_samples},
          {"noise_min", c.data.noise_min},
          {"noise_max", c.data.noise_max},
          {"scale_min", c.data.scale_min},
          {"scale_max", c.data.scale_max},
          {"rotation_strength", c.data.rotation_strength},
          {"class_separation", c.data.class_separation},
          {"data_seed", c.data.seed},
          {"prompts_per_domain", c.prompts_per_domain},
          {"prompt_length", c.prompt_length},
          {"method", method_name(c.method)},
          {"output_dir", c.output_dir}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.train.seed = seed;
  c.backbone.seed = seed;
  c.data.seed = seed;
}

}  // namespace kaprompt
