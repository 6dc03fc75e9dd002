#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kaprompt/backbone.hpp"
#include "kaprompt/prompt_pool.hpp"
#include "kaprompt/sample.hpp"
#include "kaprompt/tensor.hpp"

namespace kaprompt {

struct TrainConfig {
  double tau = 0.01;            // old-prompt weight temperature
  double lambda = 0.1;          // alignment loss weight
  std::size_t top_k = 3;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  double key_loss_weight = 1.0;
  std::uint64_t seed = 0;

  // Throws ConfigError unless tau > 0, lambda >= 0, K >= 1, epochs >= 1, ...
  void validate() const;
};

struct SampleTrace {
  double alpha = 0.0;
  std::vector<EntryId> new_matches;
  std::vector<EntryId> old_matches;
  std::vector<double> old_weights;
};

/// Losses of one optimizer step, averaged over the batch.
/// total_loss == new_loss + lambda * align_loss + key_weight * key_loss.
struct StepReport {
  std::size_t domain = 0;
  std::size_t iteration = 0;
  double new_loss = 0.0;
  double align_loss = 0.0;  // 0 while the alignment term is inactive
  double key_loss = 0.0;
  double total_loss = 0.0;
  double alpha = 0.0;        // batch mean
  double mean_weight = 0.0;  // mean old-prompt weight, 0 without alignment
  std::vector<SampleTrace> samples;
};

namespace training {

struct NewPromptOutput {
  Tensor loss;   // L_new
  Tensor fused;  // mean of the K matched new prompts
  MatchResult match;
  double alpha = 0.0;  // detached
};

// Matches `query` within the current set, fuses the matched prompts and
// returns the cross-entropy of the prompted forward pass. `prompts` holds the
// (possibly taped) prompt tensors of `current`, in the same order.
NewPromptOutput new_prompt_step(const FrozenBackbone& backbone, const ClassifierHead& head,
                                std::span<const double> x, std::size_t label,
                                const Tensor& query, const PromptSet& current,
                                std::span<const Tensor> prompts, std::size_t k);

// w_i = exp(min(s_i - alpha, 0) / tau). w_i == 1 exactly iff s_i >= alpha.
std::vector<double> old_prompt_weights(std::span<const double> old_scores, double alpha,
                                       double tau);

// Coefficients (w_1..w_K, K) / (K + sum w): K old ones, then the new prompt's.
std::vector<double> aligned_fusion_coefficients(std::span<const double> weights);

// Weighted blend of K frozen old prompts with the fused new prompt. Only
// `fused_new` carries gradient.
Tensor aligned_fusion(std::span<const Tensor> old_prompts, std::span<const double> weights,
                      const Tensor& fused_new);

struct AlignmentOutput {
  Tensor loss;  // L_agn
  MatchResult match;
  std::vector<double> weights;
};

// Matches `query` within the historical pool and evaluates the alignment
// loss. Throws PreconditionError when the pool has fewer than K prompts.
AlignmentOutput alignment_step(const FrozenBackbone& backbone, const ClassifierHead& head,
                               std::span<const double> x, std::size_t label,
                               const Tensor& query, const PromptPool& history, double alpha,
                               const Tensor& fused_new, std::size_t k, double tau);

// sum_i (1 - cos(query, key_i)).
Tensor key_update_loss(const Tensor& query, std::span<const Tensor> matched_keys);

struct DomainResult {
  PromptSet prompts;
  std::vector<StepReport> steps;
};

/// Trains the new prompt set of one domain with the shared head.
///
/// `queries` holds q(x) of every sample in `data` (one row each). The history
/// pool and the backbone are read only. With an empty history or lambda = 0
/// the alignment term is skipped. Batches are reshuffled every epoch from a
/// stream seeded by (config.seed, domain).
DomainResult train_domain(std::span<const Sample> data, const Tensor& queries,
                          PromptSet initial, const PromptPool& history,
                          const FrozenBackbone& backbone, ClassifierHead& head,
                          const TrainConfig& config, std::size_t domain);

}  // namespace training
}  // namespace kaprompt
