#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kaprompt/backbone.hpp"
#include "kaprompt/checkpoint.hpp"
#include "kaprompt/experiment_config.hpp"
#include "kaprompt/prompt_pool.hpp"
#include "kaprompt/sample.hpp"
#include "kaprompt/synthetic.hpp"
#include "kaprompt/training.hpp"

namespace kaprompt {

// Lower-triangular grid: at(t, i) is the accuracy on domain i after training
// through domain t, defined for i <= t.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t num_domains = 0);

  std::size_t num_domains() const { return rows_.size(); }
  void set_row(std::size_t t, std::vector<double> row);
  double at(std::size_t t, std::size_t i) const;
  const std::vector<double>& row(std::size_t t) const;
  bool row_complete(std::size_t t) const { return rows_.at(t).size() == t + 1; }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::vector<std::vector<double>> rows_;
};

double avg_acc(std::span<const double> row);

// Index of the largest logit; ties resolve to the lowest class index.
std::size_t argmax(const Tensor& logits);

// Top-K match over the unified pool, fuse, prompted forward pass, argmax.
std::size_t infer(std::span<const double> x, const PromptPool& pool,
                  const FrozenBackbone& backbone, const ClassifierHead& head, std::size_t k);
std::size_t infer_with_query(std::span<const double> x, const Tensor& query,
                             const PromptPool& pool, const FrozenBackbone& backbone,
                             const ClassifierHead& head, std::size_t k);

using Predictor = std::function<std::size_t(const Sample&)>;

// Fraction of correct predictions on each test set. Throws EvaluationError
// if a test set is empty.
std::vector<double> evaluate_with(const Predictor& predict, std::span<const Dataset> test_sets);
std::vector<double> evaluate(const PromptPool& pool, const FrozenBackbone& backbone,
                             const ClassifierHead& head, std::span<const Dataset> test_sets,
                             std::size_t k);

struct ExperimentResult {
  ExperimentConfig config;
  AccuracyMatrix accuracy;
  std::vector<StepReport> steps;
  nlohmann::json mining_reports = nlohmann::json::array();
  std::vector<PromptPool> pool_snapshots;  // pool after each domain
  PromptPool pool;
  ClassifierHead head;
  std::uint64_t backbone_checksum_before = 0;
  std::uint64_t backbone_checksum_after = 0;
};

// Sequential run over the synthetic stream: mining (KA arm, t >= 1),
// train_domain, then evaluation of all seen domains. With a non-empty
// output_dir every result file is written there as soon as it is known.
ExperimentResult run_experiment(const ExperimentConfig& config);

struct AblationRow {
  std::string condition;
  double avg_acc = 0.0;
  std::vector<double> accuracies;
  std::map<std::size_t, RowPermutation> permutations;  // empty for "Non"
};

// Evaluates a checkpoint with every domain's prompt rows reordered.
AblationRow evaluate_permuted(const CheckpointData& checkpoint, std::span<const Dataset> test_sets,
                              std::size_t k, const std::map<std::size_t, RowPermutation>& perms,
                              std::string condition);

// "Non" plus n_shuffles conditions, each with an independent seeded
// permutation per domain.
std::vector<AblationRow> shuffle_ablation(const CheckpointData& checkpoint,
                                          std::span<const Dataset> test_sets, std::size_t k,
                                          std::size_t n_shuffles, std::uint64_t seed);

struct CompareRow {
  std::uint64_t seed = 0;
  double ka_prompt = 0.0;
  double baseline = 0.0;
};

struct CompareSummary {
  std::vector<CompareRow> rows;
  double mean_ka_prompt = 0.0;
  double mean_baseline = 0.0;
  std::size_t ka_wins = 0;
};

// Runs both arms for every seed (apply_seed) without writing files.
CompareSummary compare_arms(const ExperimentConfig& config, std::span<const std::uint64_t> seeds);

// Output writers; numbers are printed with 17 significant digits.
std::string format_number(double v);
void write_accuracy_csv(const std::filesystem::path& path, const AccuracyMatrix& m);
void write_avg_acc_csv(const std::filesystem::path& path, const AccuracyMatrix& m);
void write_steps_csv(const std::filesystem::path& path, std::span<const StepReport> steps);
void write_per_domain_csv(const std::filesystem::path& path, const AccuracyMatrix& m,
                          std::span<const DomainData> stream);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_compare_csv(const std::filesystem::path& path, const CompareSummary& summary);
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace kaprompt
