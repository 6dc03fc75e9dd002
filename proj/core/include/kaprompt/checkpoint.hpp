#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "kaprompt/backbone.hpp"
#include "kaprompt/prompt_pool.hpp"

namespace kaprompt {

// On-disk layout, all integers and floats little-endian:
//
//   8 bytes   magic "KAPCKPT\n"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: backbone config and seed, head and pool shapes,
//             ordered tensor directory (name + shape), free-form metadata
//   payload   every tensor of the directory as f64 values, in order
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  PromptPool pool;
  FrozenBackbone backbone;
  ClassifierHead head;
  nlohmann::json meta;
};

// Shapes a caller requires; a mismatch raises CheckpointShapeError.
struct CheckpointExpectation {
  std::optional<std::size_t> prompts_per_domain;
  std::optional<std::size_t> prompt_length;
  std::optional<std::size_t> dim;
  std::optional<std::size_t> classes;
};

// Writes through a temporary file and renames, so a failed save never leaves
// a partial checkpoint behind.
void save_checkpoint(const std::filesystem::path& path, const PromptPool& pool,
                     const FrozenBackbone& backbone, const ClassifierHead& head,
                     const nlohmann::json& meta = nlohmann::json::object());

CheckpointData load_checkpoint(const std::filesystem::path& path,
                               const CheckpointExpectation& expect = {});

}  // namespace kaprompt
