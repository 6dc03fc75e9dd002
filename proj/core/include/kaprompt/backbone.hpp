#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kaprompt/random.hpp"
#include "kaprompt/tensor.hpp"

namespace kaprompt {

struct BackboneConfig {
  std::size_t dim = 32;          // D
  std::size_t num_patches = 8;   // L_h
  std::size_t patch_dim = 8;     // raw values per patch
  std::size_t num_blocks = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_dim = 64;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return num_patches * patch_dim; }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

/// Linear classifier over the final class-token embedding, shared by every
/// domain. Copies of the two tensors are watched on the tape during training.
struct ClassifierHead {
  Tensor weight;  // D x C
  Tensor bias;    // C

  static ClassifierHead init(std::size_t dim, std::size_t classes, Rng& rng);
  std::size_t classes() const { return bias.size(); }
  Tensor logits(const Tensor& feature) const;
};

/// Small pre-LN transformer encoder standing in for a frozen pre-trained ViT.
///
/// Inputs are flat vectors of num_patches * patch_dim values. The sequence fed
/// to the blocks is [cls; tokens; prompt rows]; fixed sinusoidal position
/// encodings are added to the class and token rows only, never to prompt rows.
/// All parameters are fixed at construction and the backbone is never
/// modified afterwards, so one instance can be shared by concurrent readers.
class FrozenBackbone {
 public:
  explicit FrozenBackbone(const BackboneConfig& config);

  const BackboneConfig& config() const { return config_; }

  Tensor tokenize(std::span<const double> x) const;

  // Pre-attention sequence [[cls]+pe; h_x+pe; prompt]. Prompt may be null.
  Tensor embed(std::span<const double> x, const Tensor* prompt) const;

  // Runs every block and the final layer norm; returns the class-token row
  // as a D-vector.
  Tensor encode(const Tensor& sequence) const;

  // Runs one block on a sequence (residual attention then residual FFN).
  Tensor apply_block(std::size_t block, const Tensor& sequence) const;

  // Softmax attention weights of one block, one matrix per head.
  std::vector<Tensor> attention_weights(std::size_t block, const Tensor& sequence) const;

  // q(x): class-token output of the prompt-free forward pass.
  Tensor extract_query(std::span<const double> x) const;

  // Stacks extract_query over a batch, one row per sample.
  Tensor extract_features_batch(std::span<const std::vector<double>> inputs) const;

  // Logits of the prompt-prepended forward pass. Differentiable with respect
  // to `prompt` and the head tensors.
  Tensor forward_with_prompt(std::span<const double> x, const Tensor& prompt,
                             const ClassifierHead& head) const;

  // Named parameters in a fixed order (checkpointing, checksums).
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  // Rebuilds a backbone from parameters in parameters() order.
  static FrozenBackbone from_parameters(const BackboneConfig& config,
                                        std::vector<Tensor> values);

  std::uint64_t checksum() const;

 private:
  struct Block {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, wk, wv, wo;
    Tensor ln2_gamma, ln2_beta;
    Tensor ff1, ff1_bias, ff2, ff2_bias;
  };

  Tensor attention(const Block& b, const Tensor& normed, std::vector<Tensor>* weights) const;
  std::vector<Tensor*> mutable_parameters();

  BackboneConfig config_;
  Tensor patch_proj_;   // patch_dim x D
  Tensor cls_token_;    // 1 x D
  Tensor positional_;   // (1 + num_patches) x D
  std::vector<Block> blocks_;
  Tensor final_gamma_, final_beta_;
};

}  // namespace kaprompt
