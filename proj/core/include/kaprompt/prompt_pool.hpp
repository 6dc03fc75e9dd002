#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "kaprompt/random.hpp"
#include "kaprompt/tensor.hpp"

namespace kaprompt {

// (origin domain, slot within that domain's set). Domains count from 0.
struct EntryId {
  std::size_t domain = 0;
  std::size_t slot = 0;
  friend auto operator<=>(const EntryId&, const EntryId&) = default;
};

struct PromptEntry {
  Tensor prompt;  // L_p x D
  Tensor key;     // D
  EntryId id;
  bool trainable = false;
};

using PromptSet = std::vector<PromptEntry>;

/// Per-domain prompt sets P_0 .. P_{t-1}. Sets are appended once their
/// domain is trained and are never modified afterwards.
class PromptPool {
 public:
  PromptPool(std::size_t prompts_per_domain, std::size_t prompt_length, std::size_t dim);

  std::size_t prompts_per_domain() const { return prompts_per_domain_; }
  std::size_t prompt_length() const { return prompt_length_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_domains() const { return sets_.size(); }
  std::size_t size() const { return sets_.size() * prompts_per_domain_; }
  bool empty() const { return sets_.empty(); }

  const PromptSet& domain(std::size_t d) const;

  // Appends the set for domain num_domains(). Entries are stored frozen.
  // Throws ValidationError on wrong count, shapes or ids.
  void add_domain(PromptSet set);

  // Unified view P_0 u ... u P_{t-1} in (domain, slot) order.
  std::vector<const PromptEntry*> entries() const;

  // Keys stacked in entries() order, one row per entry.
  Tensor stacked_keys() const;

  std::uint64_t checksum() const;
  friend bool operator==(const PromptPool& a, const PromptPool& b);

 private:
  std::size_t prompts_per_domain_;
  std::size_t prompt_length_;
  std::size_t dim_;
  std::vector<PromptSet> sets_;
};

struct MatchResult {
  std::vector<std::size_t> positions;  // indices into the candidate list
  std::vector<EntryId> ids;
  std::vector<double> scores;          // descending
  double alpha = 0.0;                  // smallest matched score
};

// (1 + cos(query, key)) / 2, clamped to [0, 1].
double score(const Tensor& query, const Tensor& key);
double score(const Tensor& query, const PromptEntry& entry);

// K best-scoring candidates; ties broken by ascending (domain, slot).
MatchResult top_k_match(const Tensor& query, std::span<const PromptEntry* const> candidates,
                        std::size_t k);
MatchResult top_k_match(const Tensor& query, const PromptSet& candidates, std::size_t k);

// Elementwise mean of K prompts. Differentiable.
Tensor fuse_linear(std::span<const Tensor> prompts);

// Permutation of prompt rows: output row r takes input row perm[r].
using RowPermutation = std::vector<std::size_t>;

// Copy of `pool` where each listed domain's prompts have their rows reordered.
// Keys are untouched. Throws ValidationError for non-bijective permutations.
PromptPool shuffle_components(const PromptPool& pool,
                              const std::map<std::size_t, RowPermutation>& per_domain);

// Cold-start set: prompts and keys uniform in [-0.5, 0.5] / sqrt(D).
PromptSet random_prompt_set(std::size_t domain, std::size_t count, std::size_t prompt_length,
                            std::size_t dim, Rng& rng);

// Per-domain key and prompt norms, for debugging.
nlohmann::json pool_statistics(const PromptPool& pool);

}  // namespace kaprompt
