#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gradient_check.hpp"
#include "greedy_reference.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/mining.hpp"

using namespace kaprompt;
using namespace kaprompt::mining;
using kaprompt::testing::dummy_prompts;
using kaprompt::testing::Grid;
using kaprompt::testing::random_grid;
using kaprompt::testing::to_relation;

namespace {

std::vector<const PromptEntry*> view(const PromptSet& set) {
  std::vector<const PromptEntry*> v;
  for (const PromptEntry& e : set) v.push_back(&e);
  return v;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  return rows;
}

ReusableMemory memory_of(std::vector<Tensor> prompts, std::vector<Tensor> keys) {
  ReusableMemory m;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    m.entries.push_back({prompts[i], keys[i], {0, i}, false});
    m.provenance.push_back({Provenance::Kind::Source, {0, i}, 0, 0});
  }
  return m;
}

}  // namespace

TEST(Relation, Examples) {
  const Tensor keys = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 1.0});
  const Tensor feats = Tensor::matrix(3, 2, {1.0, 0.0, -1.0, 0.0, 1.0, 1.0});
  const RelationMatrix s0 = build_base_relation(keys, feats);
  ASSERT_EQ(s0.values.shape(), (Shape{2, 3}));
  const double diag = (1.0 + 1.0 / std::sqrt(2.0)) / 2.0;
  const std::vector<double> expected{1.0, 0.0, diag, 0.5, 0.5, diag};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(s0.values[i], expected[i], 1e-15);
  EXPECT_EQ(s0.rows[1], (EntryId{0, 1}));
}

TEST(Relation, MatchesPerPairCosine) {
  Rng rng = make_rng(41);
  const Tensor keys = kaprompt::testing::random_matrix(7, 5, rng);
  const Tensor feats = kaprompt::testing::random_matrix(11, 5, rng);
  const RelationMatrix s0 = build_base_relation(keys, feats);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 11; ++j) {
      double dot = 0.0, nk = 0.0, nf = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        dot += keys.at(i, c) * feats.at(j, c);
        nk += keys.at(i, c) * keys.at(i, c);
        nf += feats.at(j, c) * feats.at(j, c);
      }
      EXPECT_NEAR(s0.values.at(i, j), (1.0 + dot / std::sqrt(nk * nf)) / 2.0, 1e-12);
    }
}

TEST(Relation, DegenerateRowNamed) {
  const Tensor keys = Tensor::matrix(1, 2, {1.0, 0.0});
  const Tensor feats = Tensor::matrix(2, 2, {1.0, 0.0, 0.0, 0.0});
  try {
    build_base_relation(keys, feats);
    FAIL() << "expected DegenerateVectorError";
  } catch (const DegenerateVectorError& e) {
    EXPECT_NE(std::string(e.what()).find("feature row 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(build_base_relation(Tensor::matrix(1, 3, {1, 0, 0}), feats), DimensionError);
}

TEST(Effect, ExamplesAndLoopOracle) {
  const RelationMatrix s0 = to_relation({{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.5, 0.5, 0.5}});
  EXPECT_EQ(sample_effect_vector(s0, std::vector<std::size_t>{}), (std::vector<double>{0, 0, 0}));
  EXPECT_EQ(sample_effect_vector(s0, std::vector<std::size_t>{0, 2}),
            (std::vector<double>{0.9, 0.5, 0.5}));
  EXPECT_THROW(sample_effect_vector(s0, std::vector<std::size_t>{3}), IndexError);

  const std::vector<double> effect{0.9, 0.5, 0.5};
  const Tensor diff = difference_matrix(s0, effect);
  const std::vector<double> hist = score_histogram(diff);
  EXPECT_NEAR(hist[0], 0.0, 1e-15);
  EXPECT_NEAR(hist[1], 0.4, 1e-15);
  EXPECT_NEAR(hist[2], 0.0, 1e-15);
  EXPECT_THROW(difference_matrix(s0, std::vector<double>{1.0}), DimensionError);

  Rng rng = make_rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const Grid g = random_grid(6, 9, rng);
    const RelationMatrix r = to_relation(g);
    const std::vector<std::size_t> sel{static_cast<std::size_t>(trial % 6), 5};
    const auto v = sample_effect_vector(r, sel);
    const Tensor d = difference_matrix(r, v);
    const auto h = score_histogram(d);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(v[j], std::max(g[sel[0]][j], g[5][j]));
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        const double expect = std::max(g[i][j] - v[j], 0.0);
        EXPECT_EQ(d.at(i, j), expect);
        total += expect;
      }
      EXPECT_NEAR(h[i], total, 1e-12);
    }
    EXPECT_NEAR(coverage(r, sel), kaprompt::testing::reference_coverage(g, sel), 1e-12);
  }
}

TEST(Greedy, WorkedExample) {
  const Grid g{{0.9, 0.1, 0.1}, {0.1, 0.9, 0.1}, {0.5, 0.5, 0.5}};
  const PromptSet prompts = dummy_prompts(3, 2, 4);
  Rng rng = make_rng(1);
  const ReusableMemory m = greedy_select(to_relation(g), view(prompts), 2, rng);
  EXPECT_EQ(m.selected_rows, (std::vector<std::size_t>{2, 0}));
  ASSERT_EQ(m.coverage_trace.size(), 2u);
  EXPECT_NEAR(m.coverage_trace[0], 1.5, 1e-12);
  EXPECT_NEAR(m.coverage_trace[1], 1.9, 1e-12);
  EXPECT_NEAR(kaprompt::testing::exhaustive_optimum(g, 2), 1.9, 1e-12);
  EXPECT_EQ(m.entries[0].prompt, prompts[2].prompt);
  EXPECT_EQ(m.fallback_count, 0u);
}

TEST(Greedy, SelectsEveryRowWhenAsked) {
  Rng rng = make_rng(43);
  const Grid g = random_grid(5, 20, rng);
  const PromptSet prompts = dummy_prompts(5, 2, 3);
  const ReusableMemory m = greedy_select(to_relation(g), view(prompts), 5, rng);
  // Later rows may add nothing; anything not picked is covered by a fallback.
  std::set<std::size_t> rows(m.selected_rows.begin(), m.selected_rows.end());
  EXPECT_EQ(rows.size(), m.selected_rows.size());
  EXPECT_EQ(m.size(), 5u);
  EXPECT_NEAR(m.coverage_trace.back(),
              kaprompt::testing::reference_coverage(g, all_rows(5)), 1e-12);
}

TEST(Greedy, DuplicateRowsArePickedOnce) {
  const Grid g{{0.8, 0.2}, {0.8, 0.2}, {0.2, 0.8}};
  const PromptSet prompts = dummy_prompts(3, 1, 2);
  Rng rng = make_rng(2);
  const ReusableMemory m = greedy_select(to_relation(g), view(prompts), 3, rng);
  EXPECT_EQ(m.selected_rows, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(m.fallback_count, 1u);
  EXPECT_EQ(m.provenance[2].kind, Provenance::Kind::Interpolated);
}

TEST(Greedy, FallsBackToInterpolation) {
  const Grid g{{0.9, 0.1}, {0.1, 0.9}, {0.5, 0.5}};
  const PromptSet prompts = dummy_prompts(3, 2, 2);
  Rng rng = make_rng(3);
  const ReusableMemory m = greedy_select(to_relation(g), view(prompts), 3, rng);
  EXPECT_EQ(m.selected_rows, (std::vector<std::size_t>{0, 1}));
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.fallback_count, 1u);
  const Provenance& p = m.provenance[2];
  EXPECT_EQ(p.kind, Provenance::Kind::Interpolated);
  EXPECT_NE(p.parent_a, p.parent_b);
  const Tensor& a = m.entries[p.parent_a].prompt;
  const Tensor& b = m.entries[p.parent_b].prompt;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_DOUBLE_EQ(m.entries[2].prompt[i], (a[i] + b[i]) / 2.0);
  }
  EXPECT_NEAR(m.coverage_trace[2], 1.8, 1e-12);
}

TEST(Greedy, RandomFillWhenMemoryTooSmall) {
  const Grid g{{0.9, 0.9}, {0.5, 0.5}};
  const PromptSet prompts = dummy_prompts(2, 2, 2);
  Rng rng = make_rng(4);
  const ReusableMemory m = greedy_select(to_relation(g), view(prompts), 3, rng);
  EXPECT_EQ(m.selected_rows, (std::vector<std::size_t>{0}));
  EXPECT_EQ(m.size(), 3u);
  EXPECT_EQ(m.random_fill_count, 2u);
  EXPECT_EQ(m.provenance[1].kind, Provenance::Kind::Random);
}

TEST(Greedy, Preconditions) {
  const PromptSet prompts = dummy_prompts(2, 1, 2);
  Rng rng = make_rng(5);
  const RelationMatrix s0 = to_relation({{0.5, 0.5}, {0.5, 0.5}});
  EXPECT_THROW(greedy_select(s0, view(prompts), 0, rng), PreconditionError);
  EXPECT_THROW(greedy_select(s0, {}, 1, rng), EmptyInputError);
  const PromptSet three = dummy_prompts(3, 1, 2);
  EXPECT_THROW(greedy_select(s0, view(three), 1, rng), DimensionError);
}

TEST(Fallback, Examples) {
  const Tensor a = Tensor::matrix(1, 2, {1.0, 3.0}), b = Tensor::matrix(1, 2, {3.0, -1.0});
  const ReusableMemory same = memory_of({a, a}, {Tensor::vector({1, 0}), Tensor::vector({1, 0})});
  Rng rng = make_rng(6);
  EXPECT_EQ(interpolation_fallback(same, rng).prompt, a);

  const ReusableMemory two = memory_of({a, b}, {Tensor::vector({1, 0}), Tensor::vector({0, 1})});
  Provenance prov;
  const PromptEntry mid = interpolation_fallback(two, rng, &prov);
  EXPECT_EQ(mid.prompt, Tensor::matrix(1, 2, {2.0, 1.0}));
  EXPECT_EQ(mid.key, Tensor::vector({0.5, 0.5}));
  EXPECT_EQ(prov.kind, Provenance::Kind::Interpolated);
  EXPECT_EQ(std::set<std::size_t>({prov.parent_a, prov.parent_b}), std::set<std::size_t>({0, 1}));

  const ReusableMemory one = memory_of({a}, {Tensor::vector({1, 0})});
  EXPECT_THROW(interpolation_fallback(one, rng), PreconditionError);
}

TEST(Fallback, Deterministic) {
  Rng source = make_rng(44);
  std::vector<Tensor> ps, ks;
  for (int i = 0; i < 6; ++i) {
    ps.push_back(gaussian_tensor({2, 3}, 1.0, source));
    ks.push_back(gaussian_tensor({3}, 1.0, source));
  }
  const ReusableMemory m = memory_of(ps, ks);
  Rng r1 = make_rng(7), r2 = make_rng(7);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(interpolation_fallback(m, r1).prompt, interpolation_fallback(m, r2).prompt);
  }
}

TEST(InitNewPrompts, CopiesAndRelabels) {
  const PromptSet prompts = dummy_prompts(3, 2, 2);
  ReusableMemory m;
  for (const PromptEntry& e : prompts) m.entries.push_back(e);
  PromptSet set = init_new_prompts(m, 4, 3);
  ASSERT_EQ(set.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(set[i].id, (EntryId{4, i}));
    EXPECT_TRUE(set[i].trainable);
    EXPECT_EQ(set[i].prompt, prompts[i].prompt);
    EXPECT_EQ(set[i].key, prompts[i].key);
  }
  set[0].prompt.mutable_values()[0] = 99.0;
  EXPECT_EQ(m.entries[0].prompt[0], 1.0);
  EXPECT_THROW(init_new_prompts(m, 4, 4), PreconditionError);
}

TEST(GreedyProperties, CoverageMonotoneAndNearOptimal) {
  Rng rng = make_rng(45);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t rows = 4 + trial % 6, cols = 3 + trial % 7, picks = 1 + trial % 4;
    const Grid g = random_grid(rows, cols, rng);
    const PromptSet prompts = dummy_prompts(rows, 1, 2);
    const ReusableMemory m = greedy_select(to_relation(g), view(prompts), picks, rng);

    for (std::size_t i = 1; i < m.coverage_trace.size(); ++i) {
      EXPECT_GE(m.coverage_trace[i], m.coverage_trace[i - 1] - 1e-12);
    }
    const double achieved = kaprompt::testing::reference_coverage(g, m.selected_rows);
    const double optimum = kaprompt::testing::exhaustive_optimum(g, picks);
    EXPECT_GE(achieved, (1.0 - 1.0 / std::exp(1.0)) * optimum - 1e-12);
    EXPECT_EQ(m.selected_rows, kaprompt::testing::reference_greedy(g, picks));

    std::set<EntryId> sources;
    for (const Provenance& p : m.provenance) {
      if (p.kind == Provenance::Kind::Source) EXPECT_TRUE(sources.insert(p.source).second);
    }
  }
}

TEST(Mining, MinesFromPool) {
  PromptPool pool(3, 2, 4);
  for (std::size_t t = 0; t < 2; ++t) {
    Rng r = make_rng(46, {t});
    pool.add_domain(random_prompt_set(t, 3, 2, 4, r));
  }
  Rng rng = make_rng(47);
  const Tensor feats = kaprompt::testing::random_matrix(10, 4, rng);
  const ReusableMemory m = mine_reusable_prompts(pool, feats, rng);
  EXPECT_EQ(m.size(), 3u);
  const auto report = memory_report(m, 2);
  EXPECT_EQ(report.at("domain"), 2);
  EXPECT_THROW(mine_reusable_prompts(PromptPool(3, 2, 4), feats, rng), EmptyInputError);
}
