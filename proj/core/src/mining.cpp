#include "kaprompt/mining.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <optional>
#include <string>

#include "kaprompt/errors.hpp"
#include "kaprompt/ops.hpp"

namespace kaprompt::mining {

RelationMatrix build_base_relation(const Tensor& keys, const Tensor& features,
                                   std::vector<EntryId> row_ids) {
  if (keys.rank() != 2 || features.rank() != 2 || keys.cols() != features.cols()) {
    throw DimensionError("build_base_relation: keys " + shape_string(keys.shape()) +
                         " and features " + shape_string(features.shape()) +
                         " must be matrices with equal width");
  }
  if (keys.rows() == 0 || features.rows() == 0) {
    throw EmptyInputError("build_base_relation: need at least one prompt and one sample");
  }
  const auto check_rows = [](const Tensor& m, const char* what) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < m.cols(); ++c) sq += m.at(r, c) * m.at(r, c);
      if (std::sqrt(sq) < ops::kNormEpsilon) {
        throw DegenerateVectorError(std::string("build_base_relation: ") + what + " row " +
                                    std::to_string(r) + " has zero norm");
      }
    }
  };
  check_rows(keys, "key");
  check_rows(features, "feature");

  const Tensor sim = ops::matmul(ops::l2_normalize_rows(keys.detach()),
                                 ops::transpose(ops::l2_normalize_rows(features.detach())));
  std::vector<double> values(sim.values().begin(), sim.values().end());
  for (double& v : values) v = std::clamp((v + 1.0) / 2.0, 0.0, 1.0);

  if (row_ids.empty()) {
    for (std::size_t r = 0; r < keys.rows(); ++r) row_ids.push_back({0, r});
  }
  if (row_ids.size() != keys.rows()) {
    throw DimensionError("build_base_relation: " + std::to_string(row_ids.size()) +
                         " row ids for " + std::to_string(keys.rows()) + " keys");
  }
  return {Tensor::matrix(keys.rows(), features.rows(), std::move(values)), std::move(row_ids)};
}

std::vector<double> sample_effect_vector(const RelationMatrix& s0,
                                         std::span<const std::size_t> selected) {
  const std::size_t cols = s0.num_samples();
  std::vector<double> effect(cols, 0.0);
  bool first = true;
  for (std::size_t row : selected) {
    if (row >= s0.num_rows()) {
      throw IndexError("sample_effect_vector: row " + std::to_string(row) + " of " +
                       std::to_string(s0.num_rows()));
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = s0.values.at(row, j);
      effect[j] = first ? v : std::max(effect[j], v);
    }
    first = false;
  }
  return effect;
}

Tensor difference_matrix(const RelationMatrix& s0, std::span<const double> effect) {
  const std::size_t rows = s0.num_rows(), cols = s0.num_samples();
  if (effect.size() != cols) {
    throw DimensionError("difference_matrix: effect vector of length " +
                         std::to_string(effect.size()) + " for " + std::to_string(cols) +
                         " samples");
  }
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out[i * cols + j] = std::max(s0.values.at(i, j) - effect[j], 0.0);
  return Tensor::matrix(rows, cols, std::move(out));
}

std::vector<double> score_histogram(const Tensor& difference) {
  std::vector<double> h(difference.rows(), 0.0);
  for (std::size_t i = 0; i < difference.rows(); ++i)
    for (std::size_t j = 0; j < difference.cols(); ++j) h[i] += difference.at(i, j);
  return h;
}

double coverage(const RelationMatrix& s0, std::span<const std::size_t> selected) {
  double total = 0.0;
  for (double v : sample_effect_vector(s0, selected)) total += v;
  return total;
}

std::string Provenance::describe() const {
  switch (kind) {
    case Kind::Source:
      return "source(" + std::to_string(source.domain) + "," + std::to_string(source.slot) + ")";
    case Kind::Interpolated:
      return "interpolated(" + std::to_string(parent_a) + "," + std::to_string(parent_b) + ")";
    case Kind::Random:
      return "random";
  }
  return "unknown";
}

PromptEntry interpolation_fallback(const ReusableMemory& memory, Rng& rng,
                                   Provenance* provenance) {
  if (memory.size() < 2) {
    throw PreconditionError("interpolation_fallback: memory holds " +
                            std::to_string(memory.size()) + " entries, need at least 2");
  }
  std::uniform_int_distribution<std::size_t> pick(0, memory.size() - 1);
  const std::size_t a = pick(rng);
  std::size_t b = pick(rng);
  while (b == a) b = pick(rng);

  const PromptEntry& x = memory.entries[a];
  const PromptEntry& y = memory.entries[b];
  PromptEntry out;
  out.prompt = ops::scale(ops::add(x.prompt, y.prompt), 0.5);
  out.key = ops::scale(ops::add(x.key, y.key), 0.5);
  out.id = x.id;
  if (provenance != nullptr) {
    provenance->kind = Provenance::Kind::Interpolated;
    provenance->parent_a = a;
    provenance->parent_b = b;
  }
  return out;
}

ReusableMemory greedy_select(const RelationMatrix& s0,
                             std::span<const PromptEntry* const> historical,
                             std::size_t target_size, Rng& rng) {
  if (historical.empty()) throw EmptyInputError("greedy_select: empty historical pool");
  if (target_size == 0) throw PreconditionError("greedy_select: target size must be >= 1");
  if (historical.size() != s0.num_rows()) {
    throw DimensionError("greedy_select: " + std::to_string(historical.size()) +
                         " prompts for a relation matrix with " +
                         std::to_string(s0.num_rows()) + " rows");
  }

  ReusableMemory memory;
  std::vector<bool> taken(s0.num_rows(), false);
  while (memory.size() < target_size) {
    const auto effect = sample_effect_vector(s0, memory.selected_rows);
    const auto histogram = score_histogram(difference_matrix(s0, effect));

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < histogram.size(); ++i) {
      if (taken[i]) continue;
      if (!best || histogram[i] > histogram[*best]) best = i;
    }

    if (best && histogram[*best] > 0.0) {
      taken[*best] = true;
      memory.selected_rows.push_back(*best);
      const PromptEntry& src = *historical[*best];
      memory.entries.push_back({src.prompt.detach(), src.key.detach(), src.id, false});
      memory.provenance.push_back({Provenance::Kind::Source, src.id, 0, 0});
    } else if (memory.size() >= 2) {
      Provenance prov;
      memory.entries.push_back(interpolation_fallback(memory, rng, &prov));
      memory.provenance.push_back(prov);
      ++memory.fallback_count;
    } else {
      const std::size_t missing = target_size - memory.size();
      std::cerr << "warning: greedy_select: no prompt adds coverage and only "
                << memory.size() << " memory entries exist; filling " << missing
                << " slot(s) with fresh random prompts\n";
      const PromptEntry& shape_ref = *historical.front();
      PromptSet fresh = random_prompt_set(0, missing, shape_ref.prompt.rows(),
                                          shape_ref.prompt.cols(), rng);
      for (PromptEntry& e : fresh) {
        e.trainable = false;
        memory.entries.push_back(std::move(e));
        memory.provenance.push_back({Provenance::Kind::Random, {}, 0, 0});
        ++memory.random_fill_count;
        memory.coverage_trace.push_back(coverage(s0, memory.selected_rows));
      }
      break;
    }
    memory.coverage_trace.push_back(coverage(s0, memory.selected_rows));
  }
  return memory;
}

PromptSet init_new_prompts(const ReusableMemory& memory, std::size_t domain,
                           std::size_t target_size) {
  if (memory.size() != target_size) {
    throw PreconditionError("init_new_prompts: memory holds " + std::to_string(memory.size()) +
                            " entries, expected " + std::to_string(target_size));
  }
  PromptSet set;
  set.reserve(memory.size());
  for (std::size_t i = 0; i < memory.size(); ++i) {
    const PromptEntry& src = memory.entries[i];
    set.push_back({src.prompt.detach(), src.key.detach(), {domain, i}, true});
  }
  return set;
}

ReusableMemory mine_reusable_prompts(const PromptPool& pool, const Tensor& features, Rng& rng) {
  if (pool.empty()) throw EmptyInputError("mine_reusable_prompts: no historical prompts");
  const auto entries = pool.entries();
  std::vector<EntryId> ids;
  ids.reserve(entries.size());
  for (const PromptEntry* e : entries) ids.push_back(e->id);
  const RelationMatrix s0 = build_base_relation(pool.stacked_keys(), features, std::move(ids));
  return greedy_select(s0, entries, pool.prompts_per_domain(), rng);
}

nlohmann::json memory_report(const ReusableMemory& memory, std::size_t domain) {
  nlohmann::json provenance = nlohmann::json::array();
  for (const Provenance& p : memory.provenance) provenance.push_back(p.describe());
  return {{"domain", domain},
          {"provenance", provenance},
          {"selected_rows", memory.selected_rows},
          {"coverage", memory.coverage_trace},
          {"fallback_count", memory.fallback_count},
          {"random_fill_count", memory.random_fill_count}};
}

}  // namespace kaprompt::mining
