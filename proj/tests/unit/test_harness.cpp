#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "kaprompt/errors.hpp"
#include "kaprompt/experiment.hpp"
#include "kaprompt/mining.hpp"

using namespace kaprompt;

namespace {

ExperimentConfig tiny_config(std::size_t domains = 3) {
  ExperimentConfig c;
  c.data.num_domains = domains;
  c.data.train_samples = 30;
  c.data.train_decrement = 5;
  c.data.test_samples = 20;
  c.backbone.dim = 16;
  c.backbone.ffn_dim = 32;
  c.backbone.num_blocks = 1;
  c.prompts_per_domain = 4;
  c.prompt_length = 2;
  c.train.top_k = 2;
  c.train.epochs = 1;
  c.train.batch_size = 10;
  return c;
}

std::vector<Dataset> test_sets(const std::vector<DomainData>& stream) {
  std::vector<Dataset> out;
  for (const DomainData& d : stream) out.push_back(d.test);
  return out;
}

}  // namespace

TEST(Config, RejectsUnknownKeyAndWrongType) {
  EXPECT_THROW(config_from_json(nlohmann::json{{"taux", 0.1}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"epochs", "five"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"method", "other"}}), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json{{"top_k", 20}}), ConfigError);
}

TEST(Config, RoundTrip) {
  ExperimentConfig c = tiny_config();
  c.train.tau = 0.25;
  c.data.rotation_strength = 0.125;
  c.method = Method::BaselineIndependent;
  apply_seed(c, 77);
  const ExperimentConfig back = config_from_json(config_to_json(c));
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.train.seed, 77u);
  EXPECT_EQ(back.backbone.seed, 77u);
  EXPECT_EQ(back.data.seed, 77u);
  EXPECT_EQ(back.method, Method::BaselineIndependent);
}

TEST(Stream, NoiselessIdentityDomainsReproduceMeans) {
  ExperimentConfig c = tiny_config(2);
  c.data.noise_min = c.data.noise_max = 0.0;
  c.data.scale_min = c.data.scale_max = 1.0;
  c.data.rotation_strength = 0.0;
  const auto stream = generate_stream(c);
  for (const DomainData& d : stream) {
    for (const Sample& s : d.train) {
      const Tensor& mu = d.spec.class_means[s.label];
      for (std::size_t i = 0; i < s.x.size(); ++i) EXPECT_EQ(s.x[i], mu[i]);
    }
  }
}

TEST(Stream, RotationsAreOrthogonal) {
  for (double strength : {0.0, 0.35, 0.5, 2.0}) {
    Rng rng = make_rng(61);
    const Tensor r = random_rotation(24, strength, rng);
    for (std::size_t i = 0; i < 24; ++i)
      for (std::size_t j = 0; j < 24; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < 24; ++k) dot += r.at(k, i) * r.at(k, j);
        EXPECT_NEAR(dot, i == j ? 1.0 : 0.0, 1e-9);
      }
  }
  Rng rng = make_rng(62);
  const Tensor id = random_rotation(5, 0.0, rng);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(id.at(i, j), i == j ? 1.0 : 0.0);
}

TEST(Stream, DeterministicBalancedAndShrinking) {
  const ExperimentConfig c = tiny_config(3);
  const auto a = generate_stream(c), b = generate_stream(c);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(a[t].train.size(), 30u - 5u * t);
    EXPECT_EQ(a[t].test.size(), 20u);
    for (std::size_t i = 0; i < a[t].train.size(); ++i) {
      EXPECT_EQ(a[t].train[i].x, b[t].train[i].x);
      EXPECT_EQ(a[t].train[i].label, b[t].train[i].label);
    }
    std::map<std::size_t, std::size_t> counts;
    for (const Sample& s : a[t].train) ++counts[s.label];
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& [label, n] : counts) {
      lo = std::min(lo, n);
      hi = std::max(hi, n);
    }
    EXPECT_EQ(counts.size(), 5u);
    EXPECT_LE(hi - lo, 1u);
  }
  EXPECT_LT(a[0].spec.noise_std, a[2].spec.noise_std);
  ExperimentConfig other = c;
  other.data.seed = 1;
  EXPECT_NE(generate_stream(other)[0].train[0].x, a[0].train[0].x);
}

TEST(Evaluation, AvgAccAndMatrix) {
  EXPECT_DOUBLE_EQ(avg_acc(std::vector<double>{0.5, 0.7}), 0.6);
  EXPECT_THROW(avg_acc(std::vector<double>{}), EmptyInputError);
  const std::vector<double> row{0.1, 0.25, 0.9, 0.3};
  double total = 0.0;
  for (double v : row) total += v;
  EXPECT_NEAR(avg_acc(row), total / 4.0, 1e-15);

  AccuracyMatrix m(2);
  m.set_row(0, {0.5});
  m.set_row(1, {0.25, 1.0});
  EXPECT_EQ(m.at(1, 0), 0.25);
  EXPECT_THROW(m.at(0, 1), IndexError);
  EXPECT_THROW(m.set_row(1, {0.5}), DimensionError);
  EXPECT_THROW(m.set_row(0, {1.5}), ValidationError);
  EXPECT_THROW(m.set_row(0, {-0.1}), ValidationError);
  EXPECT_TRUE(m.row_complete(1));
}

TEST(Evaluation, ArgmaxPrefersFirstMaximum) {
  EXPECT_EQ(argmax(Tensor::vector({0.1, 0.7, 0.7, 0.2})), 1u);
  EXPECT_EQ(argmax(Tensor::vector({3.0})), 0u);
}

TEST(Evaluation, CountsCorrectPredictions) {
  Dataset a, b;
  for (std::size_t i = 0; i < 8; ++i) a.push_back({{static_cast<double>(i)}, i % 2});
  for (std::size_t i = 0; i < 5; ++i) b.push_back({{static_cast<double>(i)}, 0});
  const Predictor always_zero = [](const Sample&) { return std::size_t{0}; };
  const std::vector<Dataset> sets{a, b};
  EXPECT_EQ(evaluate_with(always_zero, sets), (std::vector<double>{0.5, 1.0}));
  const Predictor first_three = [](const Sample& s) { return s.x[0] < 3 ? s.label : 9; };
  EXPECT_EQ(evaluate_with(first_three, sets), (std::vector<double>{3.0 / 8.0, 3.0 / 5.0}));
  const std::vector<Dataset> with_empty{a, Dataset{}};
  EXPECT_THROW(evaluate_with(always_zero, with_empty), EvaluationError);
}

TEST(Evaluation, InferComposesMatchFuseForward) {
  const ExperimentConfig c = tiny_config(2);
  const ExperimentResult r = run_experiment(c);
  const FrozenBackbone bb(c.backbone);
  const auto stream = generate_stream(c);
  const auto entries = r.pool.entries();
  for (std::size_t i = 0; i < 10; ++i) {
    const Sample& s = stream[1].test[i];
    const Tensor q = bb.extract_query(s.x);
    const MatchResult m = top_k_match(q, entries, c.train.top_k);
    std::vector<Tensor> chosen;
    for (std::size_t pos : m.positions) chosen.push_back(entries[pos]->prompt);
    const Tensor logits = bb.forward_with_prompt(s.x, fuse_linear(chosen), r.head);
    EXPECT_EQ(infer(s.x, r.pool, bb, r.head, c.train.top_k), argmax(logits));
  }
  const auto checksum = r.pool.checksum();
  const auto tests = test_sets(stream);
  const auto acc = evaluate(r.pool, bb, r.head, tests, c.train.top_k);
  EXPECT_EQ(r.pool.checksum(), checksum);
  EXPECT_EQ(acc, r.accuracy.row(1));
}

TEST(Experiment, SingleDomainArmsAgree) {
  ExperimentConfig c = tiny_config(1);
  const ExperimentResult ka = run_experiment(c);
  c.method = Method::BaselineIndependent;
  const ExperimentResult base = run_experiment(c);
  EXPECT_EQ(ka.accuracy, base.accuracy);
  EXPECT_EQ(ka.pool, base.pool);
  EXPECT_EQ(ka.head.weight, base.head.weight);
}

TEST(Experiment, RerunIsIdentical) {
  const ExperimentConfig c = tiny_config(3);
  const ExperimentResult a = run_experiment(c), b = run_experiment(c);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.pool, b.pool);
  EXPECT_EQ(a.mining_reports, b.mining_reports);
  EXPECT_EQ(a.backbone_checksum_before, a.backbone_checksum_after);
  ASSERT_EQ(a.pool_snapshots.size(), 3u);
  // Earlier sets are frozen once their domain is done.
  for (std::size_t t = 1; t < 3; ++t) {
    for (std::size_t d = 0; d < t; ++d) {
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(a.pool_snapshots[t].domain(d)[i].prompt, a.pool_snapshots[d].domain(d)[i].prompt);
      }
    }
  }
}

TEST(Experiment, MiningOnlyAfterFirstDomain) {
  ExperimentConfig c = tiny_config(3);
  const ExperimentResult ka = run_experiment(c);
  ASSERT_EQ(ka.mining_reports.size(), 2u);
  EXPECT_EQ(ka.mining_reports[0].at("domain"), 1);
  EXPECT_EQ(ka.mining_reports[1].at("domain"), 2);
  c.method = Method::BaselineIndependent;
  EXPECT_TRUE(run_experiment(c).mining_reports.empty());
}

TEST(Ablation, IdentityEqualsNonAndPermutationsReported) {
  const ExperimentConfig c = tiny_config(2);
  const ExperimentResult r = run_experiment(c);
  const CheckpointData ckpt{r.pool, FrozenBackbone(c.backbone), r.head, {}};
  const auto tests = test_sets(generate_stream(c));
  const auto rows = shuffle_ablation(ckpt, tests, c.train.top_k, 3, 5);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].condition, "Non");
  EXPECT_TRUE(rows[0].permutations.empty());
  EXPECT_EQ(rows[0].accuracies, r.accuracy.row(1));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].permutations.size(), 2u);
    for (const auto& [domain, perm] : rows[i].permutations) EXPECT_EQ(perm.size(), 2u);
  }
  const std::map<std::size_t, RowPermutation> identity{{0, {0, 1}}, {1, {0, 1}}};
  const AblationRow same = evaluate_permuted(ckpt, tests, c.train.top_k, identity, "identity");
  EXPECT_EQ(same.accuracies, rows[0].accuracies);
  EXPECT_EQ(same.avg_acc, rows[0].avg_acc);
}
