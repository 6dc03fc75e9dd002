#pragma once

#include <cstddef>
#include <vector>

#include "kaprompt/mining.hpp"
#include "kaprompt/random.hpp"

namespace kaprompt::testing {

using Grid = std::vector<std::vector<double>>;

// F(M) straight from the definition.
double reference_coverage(const Grid& s0, const std::vector<std::size_t>& subset);

// Step-by-step greedy written from the definition: marginal gain of each
// unselected row, strict improvement wins, so ties go to the lowest index.
// Stops early when no row has positive gain.
std::vector<std::size_t> reference_greedy(const Grid& s0, std::size_t picks);

// Best coverage over every subset of exactly `size` rows.
double exhaustive_optimum(const Grid& s0, std::size_t size);

Grid random_grid(std::size_t rows, std::size_t cols, Rng& rng);
mining::RelationMatrix to_relation(const Grid& g);

// Frozen dummy prompts, one per row, for greedy_select.
PromptSet dummy_prompts(std::size_t count, std::size_t prompt_length, std::size_t dim);

}  // namespace kaprompt::testing
