#include "kaprompt/backbone.hpp"

#include <cmath>

#include "kaprompt/checksum.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/ops.hpp"

namespace kaprompt {

namespace {

Tensor ones(std::size_t n) { return Tensor::vector(std::vector<double>(n, 1.0)); }

Tensor sinusoidal_table(std::size_t positions, std::size_t dim) {
  std::vector<double> values(positions * dim);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      values[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::matrix(positions, dim, std::move(values));
}

void validate(const BackboneConfig& c) {
  if (c.dim == 0 || c.num_patches == 0 || c.patch_dim == 0 || c.num_heads == 0 ||
      c.ffn_dim == 0) {
    throw ConfigError("backbone: all dimensions must be positive");
  }
  if (c.dim % c.num_heads != 0) {
    throw ConfigError("backbone: dim " + std::to_string(c.dim) +
                      " is not divisible by num_heads " + std::to_string(c.num_heads));
  }
}

}  // namespace

ClassifierHead ClassifierHead::init(std::size_t dim, std::size_t classes, Rng& rng) {
  return {gaussian_tensor({dim, classes}, 0.01, rng), Tensor::zeros({classes})};
}

Tensor ClassifierHead::logits(const Tensor& feature) const {
  if (feature.size() != weight.rows()) {
    throw DimensionError("classifier: feature of shape " + shape_string(feature.shape()) +
                         " does not match weight " + shape_string(weight.shape()));
  }
  const Tensor row = ops::reshape(feature, {1, feature.size()});
  return ops::add(ops::reshape(ops::matmul(row, weight), {weight.cols()}), bias);
}

FrozenBackbone::FrozenBackbone(const BackboneConfig& config) : config_(config) {
  validate(config_);
  const std::size_t d = config_.dim;
  const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng = make_rng(config_.seed, {0x62616b62ull});

  patch_proj_ = gaussian_tensor({config_.patch_dim, d}, stddev, rng);
  cls_token_ = gaussian_tensor({1, d}, stddev, rng);
  positional_ = sinusoidal_table(1 + config_.num_patches, d);
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    Block block;
    block.ln1_gamma = ones(d);
    block.ln1_beta = Tensor::zeros({d});
    block.wq = gaussian_tensor({d, d}, stddev, rng);
    block.wk = gaussian_tensor({d, d}, stddev, rng);
    block.wv = gaussian_tensor({d, d}, stddev, rng);
    block.wo = gaussian_tensor({d, d}, stddev, rng);
    block.ln2_gamma = ones(d);
    block.ln2_beta = Tensor::zeros({d});
    block.ff1 = gaussian_tensor({d, config_.ffn_dim}, stddev, rng);
    block.ff1_bias = Tensor::zeros({config_.ffn_dim});
    block.ff2 = gaussian_tensor({config_.ffn_dim, d}, stddev, rng);
    block.ff2_bias = Tensor::zeros({d});
    blocks_.push_back(std::move(block));
  }
  final_gamma_ = ones(d);
  final_beta_ = Tensor::zeros({d});
}

Tensor FrozenBackbone::tokenize(std::span<const double> x) const {
  if (x.size() != config_.input_dim()) {
    throw DimensionError("tokenize: expected input of length " +
                         std::to_string(config_.input_dim()) + ", got " +
                         std::to_string(x.size()));
  }
  const Tensor patches =
      Tensor::matrix(config_.num_patches, config_.patch_dim, {x.begin(), x.end()});
  return ops::matmul(patches, patch_proj_);
}

Tensor FrozenBackbone::embed(std::span<const double> x, const Tensor* prompt) const {
  const Tensor tokens = tokenize(x);
  const Tensor positioned_cls = ops::add(cls_token_, ops::slice_rows(positional_, 0, 1));
  const Tensor positioned_tokens =
      ops::add(tokens, ops::slice_rows(positional_, 1, config_.num_patches));
  if (prompt == nullptr) {
    const Tensor parts[] = {positioned_cls, positioned_tokens};
    return ops::concat_rows(parts);
  }
  if (prompt->rank() != 2 || prompt->cols() != config_.dim) {
    throw DimensionError("forward_with_prompt: prompt shape " +
                         shape_string(prompt->shape()) + " does not have " +
                         std::to_string(config_.dim) + " columns");
  }
  const Tensor parts[] = {positioned_cls, positioned_tokens, *prompt};
  return ops::concat_rows(parts);
}

Tensor FrozenBackbone::attention(const Block& b, const Tensor& normed,
                                 std::vector<Tensor>* weights) const {
  const Tensor q = ops::matmul(normed, b.wq);
  const Tensor k = ops::matmul(normed, b.wk);
  const Tensor v = ops::matmul(normed, b.wv);
  const std::size_t head_dim = config_.dim / config_.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<Tensor> heads;
  heads.reserve(config_.num_heads);
  for (std::size_t h = 0; h < config_.num_heads; ++h) {
    const std::size_t begin = h * head_dim;
    const Tensor qh = ops::slice_cols(q, begin, head_dim);
    const Tensor kh = ops::slice_cols(k, begin, head_dim);
    const Tensor vh = ops::slice_cols(v, begin, head_dim);
    const Tensor attn =
        ops::softmax_rows(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt));
    if (weights != nullptr) weights->push_back(attn.detach());
    heads.push_back(ops::matmul(attn, vh));
  }
  return ops::matmul(ops::concat_cols(heads), b.wo);
}

Tensor FrozenBackbone::apply_block(std::size_t block, const Tensor& sequence) const {
  if (block >= blocks_.size()) {
    throw IndexError("apply_block: block " + std::to_string(block) + " of " +
                     std::to_string(blocks_.size()));
  }
  const Block& b = blocks_[block];
  Tensor x = ops::add(
      sequence, attention(b, ops::layer_norm_rows(sequence, b.ln1_gamma, b.ln1_beta), nullptr));
  const Tensor normed = ops::layer_norm_rows(x, b.ln2_gamma, b.ln2_beta);
  const Tensor hidden = ops::gelu(ops::add_row_vector(ops::matmul(normed, b.ff1), b.ff1_bias));
  return ops::add(x, ops::add_row_vector(ops::matmul(hidden, b.ff2), b.ff2_bias));
}

std::vector<Tensor> FrozenBackbone::attention_weights(std::size_t block,
                                                      const Tensor& sequence) const {
  if (block >= blocks_.size()) {
    throw IndexError("attention_weights: block " + std::to_string(block) + " of " +
                     std::to_string(blocks_.size()));
  }
  const Block& b = blocks_[block];
  std::vector<Tensor> weights;
  attention(b, ops::layer_norm_rows(sequence.detach(), b.ln1_gamma, b.ln1_beta), &weights);
  return weights;
}

Tensor FrozenBackbone::encode(const Tensor& sequence) const {
  Tensor x = sequence;
  for (std::size_t b = 0; b < blocks_.size(); ++b) x = apply_block(b, x);
  const Tensor cls = ops::layer_norm_rows(ops::slice_rows(x, 0, 1), final_gamma_, final_beta_);
  return ops::reshape(cls, {config_.dim});
}

Tensor FrozenBackbone::extract_query(std::span<const double> x) const {
  return encode(embed(x, nullptr));
}

Tensor FrozenBackbone::extract_features_batch(
    std::span<const std::vector<double>> inputs) const {
  if (inputs.empty()) throw EmptyInputError("extract_features_batch: empty dataset");
  std::vector<double> values;
  values.reserve(inputs.size() * config_.dim);
  for (const auto& x : inputs) {
    const Tensor q = extract_query(x);
    values.insert(values.end(), q.values().begin(), q.values().end());
  }
  return Tensor::matrix(inputs.size(), config_.dim, std::move(values));
}

Tensor FrozenBackbone::forward_with_prompt(std::span<const double> x, const Tensor& prompt,
                                           const ClassifierHead& head) const {
  return head.logits(encode(embed(x, &prompt)));
}

std::vector<std::pair<std::string, const Tensor*>> FrozenBackbone::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.emplace_back("patch_proj", &patch_proj_);
  out.emplace_back("cls_token", &cls_token_);
  out.emplace_back("positional", &positional_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1_gamma", &b.ln1_gamma);
    out.emplace_back(p + "ln1_beta", &b.ln1_beta);
    out.emplace_back(p + "wq", &b.wq);
    out.emplace_back(p + "wk", &b.wk);
    out.emplace_back(p + "wv", &b.wv);
    out.emplace_back(p + "wo", &b.wo);
    out.emplace_back(p + "ln2_gamma", &b.ln2_gamma);
    out.emplace_back(p + "ln2_beta", &b.ln2_beta);
    out.emplace_back(p + "ff1", &b.ff1);
    out.emplace_back(p + "ff1_bias", &b.ff1_bias);
    out.emplace_back(p + "ff2", &b.ff2);
    out.emplace_back(p + "ff2_bias", &b.ff2_bias);
  }
  out.emplace_back("final_gamma", &final_gamma_);
  out.emplace_back("final_beta", &final_beta_);
  return out;
}

std::vector<Tensor*> FrozenBackbone::mutable_parameters() {
  std::vector<Tensor*> out{&patch_proj_, &cls_token_, &positional_};
  for (Block& b : blocks_) {
    for (Tensor* t : {&b.ln1_gamma, &b.ln1_beta, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gamma,
                      &b.ln2_beta, &b.ff1, &b.ff1_bias, &b.ff2, &b.ff2_bias}) {
      out.push_back(t);
    }
  }
  out.push_back(&final_gamma_);
  out.push_back(&final_beta_);
  return out;
}

FrozenBackbone FrozenBackbone::from_parameters(const BackboneConfig& config,
                                               std::vector<Tensor> values) {
  // Start from a freshly built backbone so shapes are known, then overwrite.
  FrozenBackbone backbone(config);
  auto slots = backbone.mutable_parameters();
  if (slots.size() != values.size()) {
    throw DimensionError("backbone: expected " + std::to_string(slots.size()) +
                         " parameter tensors, got " + std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]->shape() != values[i].shape()) {
      throw DimensionError("backbone: parameter " + std::to_string(i) + " has shape " +
                           shape_string(values[i].shape()) + ", expected " +
                           shape_string(slots[i]->shape()));
    }
    *slots[i] = values[i].detach();
  }
  return backbone;
}

std::uint64_t FrozenBackbone::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const auto& [name, tensor] : parameters()) hash = fnv1a(tensor->values(), hash);
  return hash;
}

}  // namespace kaprompt
