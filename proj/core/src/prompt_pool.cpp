#include "kaprompt/prompt_pool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kaprompt/checksum.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/ops.hpp"

namespace kaprompt {

namespace {

double l2_norm(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  return std::sqrt(sq);
}

void validate_permutation(const RowPermutation& perm, std::size_t length) {
  if (perm.size() != length) {
    throw ValidationError("shuffle_components: permutation of length " +
                          std::to_string(perm.size()) + " for prompts of length " +
                          std::to_string(length));
  }
  std::vector<bool> seen(length, false);
  for (std::size_t r : perm) {
    if (r >= length || seen[r]) {
      throw ValidationError("shuffle_components: permutation is not a bijection");
    }
    seen[r] = true;
  }
}

}  // namespace

PromptPool::PromptPool(std::size_t prompts_per_domain, std::size_t prompt_length,
                       std::size_t dim)
    : prompts_per_domain_(prompts_per_domain), prompt_length_(prompt_length), dim_(dim) {
  if (prompts_per_domain == 0 || prompt_length == 0 || dim == 0) {
    throw ConfigError("prompt pool: N_p, L_p and D must be positive");
  }
}

const PromptSet& PromptPool::domain(std::size_t d) const {
  if (d >= sets_.size()) {
    throw IndexError("prompt pool: domain " + std::to_string(d) + " of " +
                     std::to_string(sets_.size()));
  }
  return sets_[d];
}

void PromptPool::add_domain(PromptSet set) {
  const std::size_t d = sets_.size();
  if (set.size() != prompts_per_domain_) {
    throw ValidationError("prompt pool: domain " + std::to_string(d) + " has " +
                          std::to_string(set.size()) + " prompts, expected " +
                          std::to_string(prompts_per_domain_));
  }
  const Shape prompt_shape{prompt_length_, dim_};
  const Shape key_shape{dim_};
  for (std::size_t i = 0; i < set.size(); ++i) {
    PromptEntry& e = set[i];
    if (e.prompt.shape() != prompt_shape || e.key.shape() != key_shape) {
      throw ValidationError("prompt pool: entry " + std::to_string(i) + " has prompt " +
                            shape_string(e.prompt.shape()) + " and key " +
                            shape_string(e.key.shape()));
    }
    if (e.id.domain != d || e.id.slot != i) {
      throw ValidationError("prompt pool: entry " + std::to_string(i) + " of domain " +
                            std::to_string(d) + " carries id (" +
                            std::to_string(e.id.domain) + ", " + std::to_string(e.id.slot) +
                            ")");
    }
    e.prompt = e.prompt.detach();
    e.key = e.key.detach();
    e.trainable = false;
  }
  sets_.push_back(std::move(set));
}

std::vector<const PromptEntry*> PromptPool::entries() const {
  std::vector<const PromptEntry*> out;
  out.reserve(size());
  for (const PromptSet& set : sets_)
    for (const PromptEntry& e : set) out.push_back(&e);
  return out;
}

Tensor PromptPool::stacked_keys() const {
  std::vector<double> values;
  values.reserve(size() * dim_);
  for (const PromptEntry* e : entries())
    values.insert(values.end(), e->key.values().begin(), e->key.values().end());
  return Tensor::matrix(size(), dim_, std::move(values));
}

std::uint64_t PromptPool::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const PromptEntry* e : entries()) {
    hash = fnv1a(e->prompt.values(), hash);
    hash = fnv1a(e->key.values(), hash);
  }
  return hash;
}

bool operator==(const PromptPool& a, const PromptPool& b) {
  if (a.prompts_per_domain_ != b.prompts_per_domain_ ||
      a.prompt_length_ != b.prompt_length_ || a.dim_ != b.dim_ ||
      a.sets_.size() != b.sets_.size()) {
    return false;
  }
  for (std::size_t d = 0; d < a.sets_.size(); ++d) {
    for (std::size_t i = 0; i < a.sets_[d].size(); ++i) {
      const PromptEntry& x = a.sets_[d][i];
      const PromptEntry& y = b.sets_[d][i];
      if (!(x.prompt == y.prompt) || !(x.key == y.key) || x.id != y.id) return false;
    }
  }
  return true;
}

double score(const Tensor& query, const Tensor& key) {
  const double cos = ops::cosine_similarity(query.detach(), key.detach()).item();
  return std::clamp((1.0 + cos) / 2.0, 0.0, 1.0);
}

double score(const Tensor& query, const PromptEntry& entry) { return score(query, entry.key); }

MatchResult top_k_match(const Tensor& query, std::span<const PromptEntry* const> candidates,
                        std::size_t k) {
  if (k == 0) throw CapacityError("top_k_match: K must be at least 1");
  if (k > candidates.size()) {
    throw CapacityError("top_k_match: K = " + std::to_string(k) + " exceeds " +
                        std::to_string(candidates.size()) + " candidates");
  }
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = score(query, *candidates[i]);

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return candidates[a]->id < candidates[b]->id;
                    });

  MatchResult result;
  for (std::size_t i = 0; i < k; ++i) {
    result.positions.push_back(order[i]);
    result.ids.push_back(candidates[order[i]]->id);
    result.scores.push_back(scores[order[i]]);
  }
  result.alpha = result.scores.back();
  return result;
}

MatchResult top_k_match(const Tensor& query, const PromptSet& candidates, std::size_t k) {
  std::vector<const PromptEntry*> view;
  view.reserve(candidates.size());
  for (const PromptEntry& e : candidates) view.push_back(&e);
  return top_k_match(query, view, k);
}

Tensor fuse_linear(std::span<const Tensor> prompts) {
  if (prompts.empty()) throw EmptyInputError("fuse_linear: no prompts to fuse");
  Tensor total = prompts.front();
  for (std::size_t i = 1; i < prompts.size(); ++i) total = ops::add(total, prompts[i]);
  return ops::scale(total, 1.0 / static_cast<double>(prompts.size()));
}

PromptPool shuffle_components(const PromptPool& pool,
                              const std::map<std::size_t, RowPermutation>& per_domain) {
  const std::size_t rows = pool.prompt_length();
  const std::size_t cols = pool.dim();
  for (const auto& [domain, perm] : per_domain) {
    if (domain >= pool.num_domains()) {
      throw ValidationError("shuffle_components: unknown domain " + std::to_string(domain));
    }
    validate_permutation(perm, rows);
  }

  PromptPool out(pool.prompts_per_domain(), rows, cols);
  for (std::size_t d = 0; d < pool.num_domains(); ++d) {
    PromptSet set = pool.domain(d);
    const auto it = per_domain.find(d);
    if (it != per_domain.end()) {
      for (PromptEntry& e : set) {
        std::vector<double> shuffled(rows * cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t src = it->second[r];
          std::copy_n(e.prompt.values().begin() + static_cast<std::ptrdiff_t>(src * cols), cols,
                      shuffled.begin() + static_cast<std::ptrdiff_t>(r * cols));
        }
        e.prompt = Tensor::matrix(rows, cols, std::move(shuffled));
      }
    }
    out.add_domain(std::move(set));
  }
  return out;
}

PromptSet random_prompt_set(std::size_t domain, std::size_t count, std::size_t prompt_length,
                            std::size_t dim, Rng& rng) {
  const double half = 0.5 / std::sqrt(static_cast<double>(dim));
  PromptSet set;
  set.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    PromptEntry e;
    e.prompt = uniform_tensor({prompt_length, dim}, -half, half, rng);
    e.key = uniform_tensor({dim}, -half, half, rng);
    e.id = {domain, i};
    e.trainable = true;
    set.push_back(std::move(e));
  }
  return set;
}

nlohmann::json pool_statistics(const PromptPool& pool) {
  nlohmann::json domains = nlohmann::json::array();
  for (std::size_t d = 0; d < pool.num_domains(); ++d) {
    nlohmann::json keys = nlohmann::json::array();
    nlohmann::json prompts = nlohmann::json::array();
    for (const PromptEntry& e : pool.domain(d)) {
      keys.push_back(l2_norm(e.key.values()));
      prompts.push_back(l2_norm(e.prompt.values()));
    }
    domains.push_back({{"domain", d}, {"key_norms", keys}, {"prompt_norms", prompts}});
  }
  return {{"prompts_per_domain", pool.prompts_per_domain()},
          {"prompt_length", pool.prompt_length()},
          {"dim", pool.dim()},
          {"domains", domains}};
}

}  // namespace kaprompt
