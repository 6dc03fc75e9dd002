#include "kaprompt/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "kaprompt/errors.hpp"
#include "kaprompt/mining.hpp"
#include "kaprompt/random.hpp"

namespace kaprompt {

namespace {

constexpr std::uint64_t kHeadStream = 0x68656164ull;
constexpr std::uint64_t kInitStream = 0x696e6974ull;
constexpr std::uint64_t kMiningStream = 0x6d696e65ull;
constexpr std::uint64_t kShuffleStream = 0x73687566ull;

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::vector<double>> inputs_of(const Dataset& data) {
  std::vector<std::vector<double>> xs;
  xs.reserve(data.size());
  for (const Sample& s : data) xs.push_back(s.x);
  return xs;
}

std::string permutation_string(const RowPermutation& perm) {
  std::string out;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (i > 0) out += ' ';
    out += std::to_string(perm[i]);
  }
  return out;
}

}  // namespace

AccuracyMatrix::AccuracyMatrix(std::size_t num_domains) : rows_(num_domains) {}

void AccuracyMatrix::set_row(std::size_t t, std::vector<double> row) {
  if (t >= rows_.size()) {
    throw IndexError("AccuracyMatrix: row " + std::to_string(t) + " of " +
                     std::to_string(rows_.size()));
  }
  if (row.size() != t + 1) {
    throw DimensionError("AccuracyMatrix: row " + std::to_string(t) + " needs " +
                         std::to_string(t + 1) + " entries, got " + std::to_string(row.size()));
  }
  for (double a : row) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw ValidationError("AccuracyMatrix: accuracy " + format_number(a) + " outside [0, 1]");
    }
  }
  rows_[t] = std::move(row);
}

double AccuracyMatrix::at(std::size_t t, std::size_t i) const {
  if (t >= rows_.size() || i > t || i >= rows_[t].size()) {
    throw IndexError("AccuracyMatrix: entry (" + std::to_string(t) + ", " + std::to_string(i) +
                     ") is undefined");
  }
  return rows_[t][i];
}

const std::vector<double>& AccuracyMatrix::row(std::size_t t) const {
  if (t >= rows_.size()) {
    throw IndexError("AccuracyMatrix: row " + std::to_string(t) + " of " +
                     std::to_string(rows_.size()));
  }
  return rows_[t];
}

double avg_acc(std::span<const double> row) {
  if (row.empty()) throw EmptyInputError("avg_acc: empty accuracy row");
  return std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
}

std::size_t argmax(const Tensor& logits) {
  if (logits.size() == 0) throw EmptyInputError("argmax: empty logits");
  const auto v = logits.values();
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t infer_with_query(std::span<const double> x, const Tensor& query,
                             const PromptPool& pool, const FrozenBackbone& backbone,
                             const ClassifierHead& head, std::size_t k) {
  if (pool.empty()) throw PreconditionError("infer: empty prompt pool");
  const auto candidates = pool.entries();
  const MatchResult match = top_k_match(query, candidates, k);
  std::vector<Tensor> matched;
  matched.reserve(k);
  for (std::size_t pos : match.positions) matched.push_back(candidates[pos]->prompt);
  return argmax(backbone.forward_with_prompt(x, fuse_linear(matched), head));
}

std::size_t infer(std::span<const double> x, const PromptPool& pool,
                  const FrozenBackbone& backbone, const ClassifierHead& head, std::size_t k) {
  return infer_with_query(x, backbone.extract_query(x), pool, backbone, head, k);
}

std::vector<double> evaluate_with(const Predictor& predict, std::span<const Dataset> test_sets) {
  for (std::size_t i = 0; i < test_sets.size(); ++i) {
    if (test_sets[i].empty()) {
      throw EvaluationError("evaluate: test set " + std::to_string(i) + " is empty");
    }
  }
  std::vector<double> row;
  row.reserve(test_sets.size());
  for (const Dataset& test : test_sets) {
    std::size_t correct = 0;
    for (const Sample& s : test) {
      if (predict(s) == s.label) ++correct;
    }
    row.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
  }
  return row;
}

std::vector<double> evaluate(const PromptPool& pool, const FrozenBackbone& backbone,
                             const ClassifierHead& head, std::span<const Dataset> test_sets,
                             std::size_t k) {
  return evaluate_with(
      [&](const Sample& s) { return infer(s.x, pool, backbone, head, k); }, test_sets);
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::size_t T = config.data.num_domains;
  const std::size_t D = config.backbone.dim;
  const std::size_t Np = config.prompts_per_domain;
  const std::size_t Lp = config.prompt_length;
  const bool ka = config.method == Method::KaPrompt;

  const std::vector<DomainData> stream = generate_stream(config);
  const FrozenBackbone backbone(config.backbone);
  Rng head_rng = make_rng(config.train.seed, {kHeadStream});

  ExperimentResult result{config,
                          AccuracyMatrix(T),
                          {},
                          nlohmann::json::array(),
                          {},
                          PromptPool(Np, Lp, D),
                          ClassifierHead::init(D, config.data.num_classes, head_rng),
                          backbone.checksum(),
                          0};
  PromptPool& pool = result.pool;
  ClassifierHead& head = result.head;

  TrainConfig train = config.train;
  if (!ka) train.lambda = 0.0;

  const std::filesystem::path out_dir = config.output_dir;
  const bool write = !config.output_dir.empty();
  if (write) {
    std::filesystem::create_directories(out_dir / "checkpoints");
    write_json(out_dir / "config.json", config_to_json(config));
  }

  std::vector<Dataset> test_sets;
  for (std::size_t t = 0; t < T; ++t) {
    const DomainData& domain = stream[t];
    test_sets.push_back(domain.test);
    const Tensor features = backbone.extract_features_batch(inputs_of(domain.train));

    PromptSet initial;
    if (ka && t > 0) {
      Rng rng = make_rng(config.train.seed, {t, kMiningStream});
      const mining::ReusableMemory memory = mining::mine_reusable_prompts(pool, features, rng);
      initial = mining::init_new_prompts(memory, t, Np);
      result.mining_reports.push_back(mining::memory_report(memory, t));
    } else {
      Rng rng = make_rng(config.train.seed, {t, kInitStream});
      initial = random_prompt_set(t, Np, Lp, D, rng);
    }

    training::DomainResult trained = training::train_domain(
        domain.train, features, std::move(initial), pool, backbone, head, train, t);
    pool.add_domain(std::move(trained.prompts));
    for (StepReport& s : trained.steps) result.steps.push_back(std::move(s));
    result.pool_snapshots.push_back(pool);

    result.accuracy.set_row(t, evaluate(pool, backbone, head, test_sets, train.top_k));

    if (write) {
      write_accuracy_csv(out_dir / "accuracy_matrix.csv", result.accuracy);
      write_avg_acc_csv(out_dir / "avg_acc.csv", result.accuracy);
      write_steps_csv(out_dir / "steps.csv", result.steps);
      write_json(out_dir / "mining_report.json", result.mining_reports);
      const nlohmann::json meta = {{"trained_through", t},
                                   {"method", method_name(config.method)},
                                   {"config", config_to_json(config)}};
      save_checkpoint(out_dir / "checkpoints" / ("domain_" + std::to_string(t) + ".ckpt"), pool,
                      backbone, head, meta);
    }
  }

  result.backbone_checksum_after = backbone.checksum();
  if (write) {
    write_per_domain_csv(out_dir / "per_domain.csv", result.accuracy, stream);
    write_json(out_dir / "pool_stats.json", pool_statistics(pool));
  }
  return result;
}

AblationRow evaluate_permuted(const CheckpointData& checkpoint, std::span<const Dataset> test_sets,
                              std::size_t k, const std::map<std::size_t, RowPermutation>& perms,
                              std::string condition) {
  if (test_sets.size() != checkpoint.pool.num_domains()) {
    throw DimensionError("ablation: " + std::to_string(test_sets.size()) +
                         " test sets for a pool of " +
                         std::to_string(checkpoint.pool.num_domains()) + " domains");
  }
  AblationRow row;
  row.condition = std::move(condition);
  row.permutations = perms;
  const PromptPool shuffled = shuffle_components(checkpoint.pool, perms);
  row.accuracies = evaluate(shuffled, checkpoint.backbone, checkpoint.head, test_sets, k);
  row.avg_acc = avg_acc(row.accuracies);
  return row;
}

std::vector<AblationRow> shuffle_ablation(const CheckpointData& checkpoint,
                                          std::span<const Dataset> test_sets, std::size_t k,
                                          std::size_t n_shuffles, std::uint64_t seed) {
  std::vector<AblationRow> rows;
  rows.push_back(evaluate_permuted(checkpoint, test_sets, k, {}, "Non"));
  const std::size_t L = checkpoint.pool.prompt_length();
  for (std::size_t c = 1; c <= n_shuffles; ++c) {
    std::map<std::size_t, RowPermutation> perms;
    for (std::size_t d = 0; d < checkpoint.pool.num_domains(); ++d) {
      Rng rng = make_rng(seed, {kShuffleStream, c, d});
      RowPermutation perm(L);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      perms[d] = std::move(perm);
    }
    rows.push_back(evaluate_permuted(checkpoint, test_sets, k, perms,
                                     "Shuffle-" + std::to_string(c)));
  }
  return rows;
}

CompareSummary compare_arms(const ExperimentConfig& config, std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw EmptyInputError("compare: no seeds");
  CompareSummary summary;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig c = config;
    c.output_dir.clear();
    apply_seed(c, seed);
    CompareRow row;
    row.seed = seed;
    c.method = Method::KaPrompt;
    ExperimentResult ka = run_experiment(c);
    row.ka_prompt = avg_acc(ka.accuracy.row(c.data.num_domains - 1));
    c.method = Method::BaselineIndependent;
    ExperimentResult base = run_experiment(c);
    row.baseline = avg_acc(base.accuracy.row(c.data.num_domains - 1));
    if (row.ka_prompt > row.baseline) ++summary.ka_wins;
    summary.mean_ka_prompt += row.ka_prompt;
    summary.mean_baseline += row.baseline;
    summary.rows.push_back(row);
  }
  summary.mean_ka_prompt /= static_cast<double>(seeds.size());
  summary.mean_baseline /= static_cast<double>(seeds.size());
  return summary;
}

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_accuracy_csv(const std::filesystem::path& path, const AccuracyMatrix& m) {
  std::ostringstream out;
  out << "trained_through,domain,accuracy\n";
  for (std::size_t t = 0; t < m.num_domains(); ++t) {
    if (!m.row_complete(t)) continue;
    for (std::size_t i = 0; i <= t; ++i) {
      out << t << ',' << i << ',' << format_number(m.at(t, i)) << '\n';
    }
  }
  write_text(path, out.str());
}

void write_avg_acc_csv(const std::filesystem::path& path, const AccuracyMatrix& m) {
  std::ostringstream out;
  out << "trained_through,avg_acc\n";
  for (std::size_t t = 0; t < m.num_domains(); ++t) {
    if (!m.row_complete(t)) continue;
    out << t << ',' << format_number(avg_acc(m.row(t))) << '\n';
  }
  write_text(path, out.str());
}

void write_steps_csv(const std::filesystem::path& path, std::span<const StepReport> steps) {
  std::ostringstream out;
  out << "domain,iteration,new_loss,align_loss,key_loss,total_loss,alpha,mean_weight\n";
  for (const StepReport& s : steps) {
    out << s.domain << ',' << s.iteration << ',' << format_number(s.new_loss) << ','
        << format_number(s.align_loss) << ',' << format_number(s.key_loss) << ','
        << format_number(s.total_loss) << ',' << format_number(s.alpha) << ','
        << format_number(s.mean_weight) << '\n';
  }
  write_text(path, out.str());
}

void write_per_domain_csv(const std::filesystem::path& path, const AccuracyMatrix& m,
                          std::span<const DomainData> stream) {
  const std::size_t last = m.num_domains() - 1;
  std::ostringstream out;
  out << "domain,final_accuracy,train_samples,test_samples,noise_std,scale\n";
  for (std::size_t i = 0; i <= last; ++i) {
    const SyntheticDomainSpec& spec = stream[i].spec;
    out << i << ',' << format_number(m.at(last, i)) << ',' << spec.train_count << ','
        << spec.test_count << ',' << format_number(spec.noise_std) << ','
        << format_number(spec.scale) << '\n';
  }
  out << "avg," << format_number(avg_acc(m.row(last))) << ",,,,\n";
  write_text(path, out.str());
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << "condition,avg_acc,last_domain_acc,permutations\n";
  for (const AblationRow& r : rows) {
    std::string perms;
    for (const auto& [domain, perm] : r.permutations) {
      if (!perms.empty()) perms += ';';
      perms += std::to_string(domain) + ':' + permutation_string(perm);
    }
    out << r.condition << ',' << format_number(r.avg_acc) << ','
        << format_number(r.accuracies.back()) << ',' << perms << '\n';
  }
  write_text(path, out.str());
}

void write_compare_csv(const std::filesystem::path& path, const CompareSummary& summary) {
  std::ostringstream out;
  out << "seed,ka_prompt,baseline_independent,difference\n";
  for (const CompareRow& r : summary.rows) {
    out << r.seed << ',' << format_number(r.ka_prompt) << ',' << format_number(r.baseline) << ','
        << format_number(r.ka_prompt - r.baseline) << '\n';
  }
  out << "mean," << format_number(summary.mean_ka_prompt) << ','
      << format_number(summary.mean_baseline) << ','
      << format_number(summary.mean_ka_prompt - summary.mean_baseline) << '\n';
  write_text(path, out.str());
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ostringstream out;
  out << "label";
  const std::size_t n = data.empty() ? 0 : data.front().x.size();
  for (std::size_t i = 0; i < n; ++i) out << ",x" << i;
  out << '\n';
  for (const Sample& s : data) {
    out << s.label;
    for (double v : s.x) out << ',' << format_number(v);
    out << '\n';
  }
  write_text(path, out.str());
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

}  // namespace kaprompt
