#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kaprompt/prompt_pool.hpp"
#include "kaprompt/random.hpp"
#include "kaprompt/tensor.hpp"

// Reusable knowledge mining: choose N_p historical prompts that jointly cover
// the new domain's samples best, and use them to initialise the new set.
namespace kaprompt::mining {

/// S0: one row per historical prompt, one column per new-domain sample,
/// entries (1 + cos(key_i, feature_j)) / 2.
struct RelationMatrix {
  Tensor values;              // rows x samples
  std::vector<EntryId> rows;  // row -> originating prompt

  std::size_t num_rows() const { return values.rows(); }
  std::size_t num_samples() const { return values.cols(); }
};

RelationMatrix build_base_relation(const Tensor& keys, const Tensor& features,
                                   std::vector<EntryId> row_ids = {});

// Column-wise max over the selected rows; all zeros for an empty selection.
std::vector<double> sample_effect_vector(const RelationMatrix& s0,
                                         std::span<const std::size_t> selected);

// S'_ij = max(S0_ij - v_j, 0).
Tensor difference_matrix(const RelationMatrix& s0, std::span<const double> effect);

// H_i = sum_j S'_ij.
std::vector<double> score_histogram(const Tensor& difference);

// F(M) = sum_j max_{i in M} S0_ij.
double coverage(const RelationMatrix& s0, std::span<const std::size_t> selected);

struct Provenance {
  enum class Kind { Source, Interpolated, Random };
  Kind kind = Kind::Source;
  EntryId source;                   // Kind::Source
  std::size_t parent_a = 0;         // Kind::Interpolated: memory positions
  std::size_t parent_b = 0;

  std::string describe() const;
};

struct ReusableMemory {
  std::vector<PromptEntry> entries;  // detached copies
  std::vector<Provenance> provenance;
  std::vector<std::size_t> selected_rows;  // S0 rows picked, in order
  std::vector<double> coverage_trace;      // F(M) after every step
  std::size_t fallback_count = 0;
  std::size_t random_fill_count = 0;

  std::size_t size() const { return entries.size(); }
};

// Mean of two random distinct memory entries (prompt and key, coefficient
// 0.5). Throws PreconditionError with fewer than two entries.
PromptEntry interpolation_fallback(const ReusableMemory& memory, Rng& rng,
                                   Provenance* provenance = nullptr);

/// Greedy coverage search over the rows of `s0`.
///
/// Each step adds the unselected row with the largest histogram value H. When
/// no unselected row adds coverage (max H <= 0) a slot is filled by
/// interpolation_fallback instead; if that is impossible because the memory
/// holds fewer than two entries, the remaining slots get fresh random
/// prompts and a warning is printed.
ReusableMemory greedy_select(const RelationMatrix& s0,
                             std::span<const PromptEntry* const> historical,
                             std::size_t target_size, Rng& rng);

// Trainable deep copies of a complete memory, re-labelled as domain `domain`.
PromptSet init_new_prompts(const ReusableMemory& memory, std::size_t domain,
                           std::size_t target_size);

// f_R + f_G for one domain: relation matrix from the pool keys and the cached
// features, then greedy_select.
ReusableMemory mine_reusable_prompts(const PromptPool& pool, const Tensor& features, Rng& rng);

nlohmann::json memory_report(const ReusableMemory& memory, std::size_t domain);

}  // namespace kaprompt::mining
