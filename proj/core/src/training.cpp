#include "kaprompt/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kaprompt/adam.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/ops.hpp"
#include "kaprompt/random.hpp"

namespace kaprompt {

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("train config: tau must be positive");
  if (!(lambda >= 0.0)) throw ConfigError("train config: lambda must be non-negative");
  if (top_k == 0) throw ConfigError("train config: top_k must be at least 1");
  if (epochs == 0) throw ConfigError("train config: epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be positive");
  if (!(key_loss_weight >= 0.0)) {
    throw ConfigError("train config: key_loss_weight must be non-negative");
  }
}

namespace training {

namespace {

constexpr std::uint64_t kBatchStream = 0x6261746368ull;

Tensor row_of(const Tensor& m, std::size_t r) {
  const auto begin = m.values().begin() + static_cast<std::ptrdiff_t>(r * m.cols());
  return Tensor::vector({begin, begin + static_cast<std::ptrdiff_t>(m.cols())});
}

}  // namespace

NewPromptOutput new_prompt_step(const FrozenBackbone& backbone, const ClassifierHead& head,
                                std::span<const double> x, std::size_t label,
                                const Tensor& query, const PromptSet& current,
                                std::span<const Tensor> prompts, std::size_t k) {
  if (prompts.size() != current.size()) {
    throw DimensionError("new_prompt_step: " + std::to_string(prompts.size()) +
                         " prompt tensors for a set of " + std::to_string(current.size()));
  }
  NewPromptOutput out;
  out.match = top_k_match(query, current, k);
  std::vector<Tensor> matched;
  matched.reserve(k);
  for (std::size_t pos : out.match.positions) matched.push_back(prompts[pos]);
  out.fused = fuse_linear(matched);
  out.loss = ops::cross_entropy(backbone.forward_with_prompt(x, out.fused, head), label);
  out.alpha = out.match.alpha;
  return out;
}

std::vector<double> old_prompt_weights(std::span<const double> old_scores, double alpha,
                                       double tau) {
  if (!(tau > 0.0)) throw ConfigError("old_prompt_weights: tau must be positive");
  std::vector<double> w;
  w.reserve(old_scores.size());
  for (double s : old_scores) {
    if (s >= alpha) {
      w.push_back(1.0);
    } else {
      // Keep w < 1 strictly even when the exponent underflows to -0.
      const double value = std::exp(std::min(s - alpha, 0.0) / tau);
      w.push_back(std::min(value, std::nextafter(1.0, 0.0)));
    }
  }
  return w;
}

std::vector<double> aligned_fusion_coefficients(std::span<const double> weights) {
  const double k = static_cast<double>(weights.size());
  const double denom = k + std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<double> c;
  c.reserve(weights.size() + 1);
  for (double w : weights) c.push_back(w / denom);
  c.push_back(k / denom);
  return c;
}

Tensor aligned_fusion(std::span<const Tensor> old_prompts, std::span<const double> weights,
                      const Tensor& fused_new) {
  if (old_prompts.empty()) throw EmptyInputError("aligned_fusion: no old prompts");
  if (old_prompts.size() != weights.size()) {
    throw DimensionError("aligned_fusion: " + std::to_string(old_prompts.size()) +
                         " prompts but " + std::to_string(weights.size()) + " weights");
  }
  for (const Tensor& p : old_prompts) {
    if (p.shape() != fused_new.shape()) {
      throw DimensionError("aligned_fusion: old prompt " + shape_string(p.shape()) +
                           " vs new prompt " + shape_string(fused_new.shape()));
    }
  }
  const auto coeff = aligned_fusion_coefficients(weights);
  Tensor old_part = ops::scale(old_prompts[0].detach(), coeff[0]);
  for (std::size_t i = 1; i < old_prompts.size(); ++i) {
    old_part = ops::add(old_part, ops::scale(old_prompts[i].detach(), coeff[i]));
  }
  return ops::add(ops::scale(fused_new, coeff.back()), old_part);
}

AlignmentOutput alignment_step(const FrozenBackbone& backbone, const ClassifierHead& head,
                               std::span<const double> x, std::size_t label,
                               const Tensor& query, const PromptPool& history, double alpha,
                               const Tensor& fused_new, std::size_t k, double tau) {
  if (history.size() < k) {
    throw PreconditionError("alignment_step: historical pool holds " +
                            std::to_string(history.size()) + " prompts, need K = " +
                            std::to_string(k));
  }
  const auto candidates = history.entries();
  AlignmentOutput out;
  out.match = top_k_match(query, candidates, k);
  out.weights = old_prompt_weights(out.match.scores, alpha, tau);
  std::vector<Tensor> old_prompts;
  old_prompts.reserve(k);
  for (std::size_t pos : out.match.positions) old_prompts.push_back(candidates[pos]->prompt);
  const Tensor blended = aligned_fusion(old_prompts, out.weights, fused_new);
  out.loss = ops::cross_entropy(backbone.forward_with_prompt(x, blended, head), label);
  return out;
}

Tensor key_update_loss(const Tensor& query, std::span<const Tensor> matched_keys) {
  if (matched_keys.empty()) throw EmptyInputError("key_update_loss: no matched keys");
  Tensor total = Tensor::scalar(0.0);
  for (const Tensor& key : matched_keys) {
    total = ops::add(total, ops::add_scalar(ops::scale(ops::cosine_similarity(query, key), -1.0), 1.0));
  }
  return total;
}

DomainResult train_domain(std::span<const Sample> data, const Tensor& queries,
                          PromptSet initial, const PromptPool& history,
                          const FrozenBackbone& backbone, ClassifierHead& head,
                          const TrainConfig& config, std::size_t domain) {
  config.validate();
  if (data.empty()) throw EmptyInputError("train_domain: empty dataset");
  if (queries.rank() != 2 || queries.rows() != data.size()) {
    throw DimensionError("train_domain: " + shape_string(queries.shape()) + " queries for " +
                         std::to_string(data.size()) + " samples");
  }
  if (initial.empty()) throw EmptyInputError("train_domain: empty prompt set");
  if (config.top_k > initial.size()) {
    throw CapacityError("train_domain: K = " + std::to_string(config.top_k) + " exceeds " +
                        std::to_string(initial.size()) + " prompts");
  }
  const bool align = !history.empty() && config.lambda > 0.0;

  DomainResult result;
  result.prompts = std::move(initial);
  PromptSet& current = result.prompts;
  for (std::size_t i = 0; i < current.size(); ++i) {
    current[i].id = {domain, i};
    current[i].trainable = true;
  }

  std::vector<Tensor*> params;
  for (PromptEntry& e : current) params.push_back(&e.prompt);
  for (PromptEntry& e : current) params.push_back(&e.key);
  params.push_back(&head.weight);
  params.push_back(&head.bias);

  AdamState adam;
  adam.config.learning_rate = config.learning_rate;

  std::vector<Tensor> query_rows;
  query_rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) query_rows.push_back(row_of(queries, i));

  Rng rng = make_rng(config.seed, {domain, kBatchStream});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t k = config.top_k;

  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double batch = static_cast<double>(end - start);

      GradientTape tape;
      std::vector<Tensor> watched;
      watched.reserve(params.size());
      for (const Tensor* p : params) watched.push_back(tape.watch(*p));
      const std::span<const Tensor> prompt_vars(watched.data(), current.size());
      const std::span<const Tensor> key_vars(watched.data() + current.size(), current.size());
      const ClassifierHead taped_head{watched[watched.size() - 2], watched.back()};

      StepReport report;
      report.domain = domain;
      report.iteration = iteration;
      Tensor total = Tensor::scalar(0.0);
      std::size_t weight_count = 0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const Sample& sample = data[idx];
        const Tensor& query = query_rows[idx];

        const NewPromptOutput fresh = new_prompt_step(backbone, taped_head, sample.x, sample.label,
                                                      query, current, prompt_vars, k);
        Tensor sample_loss = fresh.loss;
        report.new_loss += fresh.loss.item();

        SampleTrace trace;
        trace.alpha = fresh.alpha;
        trace.new_matches = fresh.match.ids;

        std::vector<Tensor> matched_keys;
        for (std::size_t pos : fresh.match.positions) matched_keys.push_back(key_vars[pos]);
        const Tensor key_loss = key_update_loss(query, matched_keys);
        report.key_loss += key_loss.item();
        sample_loss = ops::add(sample_loss, ops::scale(key_loss, config.key_loss_weight));

        if (align) {
          const AlignmentOutput aligned =
              alignment_step(backbone, taped_head, sample.x, sample.label, query, history,
                             fresh.alpha, fresh.fused, k, config.tau);
          report.align_loss += aligned.loss.item();
          sample_loss = ops::add(sample_loss, ops::scale(aligned.loss, config.lambda));
          trace.old_matches = aligned.match.ids;
          trace.old_weights = aligned.weights;
          for (double w : aligned.weights) report.mean_weight += w;
          weight_count += aligned.weights.size();
        }
        report.alpha += fresh.alpha;
        total = ops::add(total, sample_loss);
        report.samples.push_back(std::move(trace));
      }
      const Tensor loss = ops::scale(total, 1.0 / batch);
      const Gradients grads = tape.backward(loss);

      std::vector<Tensor> grad_values;
      grad_values.reserve(watched.size());
      for (const Tensor& w : watched) grad_values.push_back(grads.wrt(w));
      adam_step(params, grad_values, adam);

      report.new_loss /= batch;
      report.align_loss /= batch;
      report.key_loss /= batch;
      report.alpha /= batch;
      report.total_loss = loss.item();
      if (weight_count > 0) report.mean_weight /= static_cast<double>(weight_count);
      result.steps.push_back(std::move(report));
      ++iteration;
    }
  }
  return result;
}

}  // namespace training
}  // namespace kaprompt
