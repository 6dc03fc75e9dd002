#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gradient_check.hpp"
#include "kaprompt/backbone.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/ops.hpp"

using namespace kaprompt;

namespace {

using Rows = std::vector<std::vector<double>>;

std::vector<double> random_input(const BackboneConfig& c, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(c.input_dim());
  for (double& v : x) v = normal(rng);
  return x;
}

Rows to_rows(const Tensor& t) {
  Rows r(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) r[i][j] = t.at(i, j);
  return r;
}

Rows mat(const Rows& a, const Tensor& w) {
  Rows out(a.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j)
      for (std::size_t k = 0; k < w.rows(); ++k) out[i][j] += a[i][k] * w.at(k, j);
  return out;
}

Rows layer_norm(const Rows& a, const Tensor& gamma, const Tensor& beta) {
  Rows out = a;
  for (auto& row : out) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = (row[j] - mean) / std::sqrt(var + 1e-5) * gamma[j] + beta[j];
    }
  }
  return out;
}

// One pre-LN block written with plain loops from the parameter table.
Rows reference_block(const Rows& seq, const std::map<std::string, const Tensor*>& p,
                     std::size_t heads) {
  const std::size_t n = seq.size(), d = seq[0].size(), hd = d / heads;
  const Rows normed = layer_norm(seq, *p.at("block0.ln1_gamma"), *p.at("block0.ln1_beta"));
  const Rows q = mat(normed, *p.at("block0.wq"));
  const Rows k = mat(normed, *p.at("block0.wk"));
  const Rows v = mat(normed, *p.at("block0.wv"));
  Rows concat(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += q[i][h * hd + c] * k[j][h * hd + c];
        logits[j] = s / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, logits[j]);
      }
      double z = 0.0;
      for (double& l : logits) z += (l = std::exp(l - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < hd; ++c) concat[i][h * hd + c] += logits[j] / z * v[j][h * hd + c];
    }
  }
  Rows x = mat(concat, *p.at("block0.wo"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x[i][j] += seq[i][j];
  Rows hidden = mat(layer_norm(x, *p.at("block0.ln2_gamma"), *p.at("block0.ln2_beta")),
                    *p.at("block0.ff1"));
  const Tensor& b1 = *p.at("block0.ff1_bias");
  for (auto& row : hidden)
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double u = row[j] + b1[j];
      row[j] = 0.5 * u * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (u + 0.044715 * u * u * u)));
    }
  Rows out = mat(hidden, *p.at("block0.ff2"));
  const Tensor& b2 = *p.at("block0.ff2_bias");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i][j] += x[i][j] + b2[j];
  return out;
}

std::map<std::string, const Tensor*> parameter_map(const FrozenBackbone& bb) {
  std::map<std::string, const Tensor*> m;
  for (const auto& [name, t] : bb.parameters()) m[name] = t;
  return m;
}

}  // namespace

TEST(Tokenize, ZeroInputGivesZeroTokens) {
  const FrozenBackbone bb(BackboneConfig{});
  const Tensor h = bb.tokenize(std::vector<double>(64, 0.0));
  EXPECT_EQ(h, Tensor::zeros({8, 32}));
}

TEST(Tokenize, UnitBasisPicksProjectionRow) {
  const FrozenBackbone bb(BackboneConfig{.seed = 3});
  const Tensor& proj = *parameter_map(bb).at("patch_proj");
  for (std::size_t idx : {0u, 13u, 63u}) {
    std::vector<double> x(64, 0.0);
    x[idx] = 1.0;
    const Tensor h = bb.tokenize(x);
    const std::size_t patch = idx / 8, within = idx % 8;
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        EXPECT_EQ(h.at(r, c), r == patch ? proj.at(within, c) : 0.0);
      }
  }
}

TEST(Tokenize, WrongLength) {
  const FrozenBackbone bb(BackboneConfig{});
  EXPECT_THROW(bb.tokenize(std::vector<double>(63, 0.0)), DimensionError);
  EXPECT_THROW(bb.extract_query(std::vector<double>(65, 0.0)), DimensionError);
}

TEST(Backbone, ConstructionIsDeterministic) {
  const FrozenBackbone a(BackboneConfig{.seed = 9}), b(BackboneConfig{.seed = 9});
  const FrozenBackbone c(BackboneConfig{.seed = 10});
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].second, *pb[i].second);
}

TEST(Backbone, RoundTripThroughParameters) {
  const FrozenBackbone a(BackboneConfig{.seed = 4});
  std::vector<Tensor> values;
  for (const auto& [name, t] : a.parameters()) values.push_back(*t);
  const FrozenBackbone b = FrozenBackbone::from_parameters(a.config(), values);
  EXPECT_EQ(a.checksum(), b.checksum());
}

TEST(Query, DeterministicAndPromptFree) {
  const FrozenBackbone bb(BackboneConfig{.seed = 1});
  Rng rng = make_rng(1);
  const auto x = random_input(bb.config(), rng);
  const Tensor q = bb.extract_query(x);
  EXPECT_EQ(q, bb.extract_query(x));
  EXPECT_EQ(q.shape(), Shape{32});
  EXPECT_EQ(q, bb.encode(bb.embed(x, nullptr)));
}

TEST(Query, BatchMatchesLoop) {
  const FrozenBackbone bb(BackboneConfig{.seed = 2});
  Rng rng = make_rng(2);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(random_input(bb.config(), rng));
  const Tensor f = bb.extract_features_batch(xs);
  ASSERT_EQ(f.shape(), (Shape{5, 32}));
  for (std::size_t i = 0; i < 5; ++i) {
    const Tensor q = bb.extract_query(xs[i]);
    for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(f.at(i, j), q[j]);
  }
}

TEST(Query, SingleAndDuplicatedSamples) {
  const FrozenBackbone bb(BackboneConfig{.seed = 2});
  Rng rng = make_rng(3);
  const auto x = random_input(bb.config(), rng);
  const std::vector<std::vector<double>> one{x}, two{x, x};
  const Tensor q = bb.extract_query(x);
  EXPECT_EQ(bb.extract_features_batch(one), Tensor::matrix(1, 32, {q.values().begin(), q.values().end()}));
  const Tensor f = bb.extract_features_batch(two);
  for (std::size_t j = 0; j < 32; ++j) EXPECT_EQ(f.at(0, j), f.at(1, j));
  EXPECT_THROW(bb.extract_features_batch(std::vector<std::vector<double>>{}), EmptyInputError);
}

TEST(Attention, RowsSumToOne) {
  const FrozenBackbone bb(BackboneConfig{.seed = 5});
  Rng rng = make_rng(5);
  const Tensor prompt = gaussian_tensor({4, 32}, 1.0, rng);
  const Tensor seq = bb.embed(random_input(bb.config(), rng), &prompt);
  for (std::size_t block = 0; block < 2; ++block) {
    const auto weights = bb.attention_weights(block, seq);
    ASSERT_EQ(weights.size(), 4u);
    for (const Tensor& w : weights) {
      ASSERT_EQ(w.shape(), (Shape{13, 13}));
      for (std::size_t r = 0; r < w.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < w.cols(); ++c) total += w.at(r, c);
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Attention, BlockMatchesReferenceImplementation) {
  const FrozenBackbone bb(BackboneConfig{.num_blocks = 1, .seed = 6});
  const auto params = parameter_map(bb);
  Rng rng = make_rng(6);
  const auto x = random_input(bb.config(), rng);

  const Tensor zeros = Tensor::zeros({4, 32});
  const Tensor with_rows = bb.embed(x, &zeros);
  const Tensor without = bb.embed(x, nullptr);
  const Rows ref_with = reference_block(to_rows(with_rows), params, 4);
  const Rows ref_without = reference_block(to_rows(without), params, 4);
  const Tensor out_with = bb.apply_block(0, with_rows);
  const Tensor out_without = bb.apply_block(0, without);
  for (std::size_t i = 0; i < out_with.rows(); ++i)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(out_with.at(i, j), ref_with[i][j], 1e-12);
  for (std::size_t i = 0; i < out_without.rows(); ++i)
    for (std::size_t j = 0; j < 32; ++j) EXPECT_NEAR(out_without.at(i, j), ref_without[i][j], 1e-12);

  // The zero rows still receive attention mass, so the class row moves.
  double moved = 0.0;
  for (std::size_t j = 0; j < 32; ++j) moved += std::abs(ref_with[0][j] - ref_without[0][j]);
  EXPECT_GT(moved, 1e-6);
}

TEST(ForwardWithPrompt, PromptShapeMismatch) {
  const FrozenBackbone bb(BackboneConfig{});
  Rng rng = make_rng(7);
  const ClassifierHead head = ClassifierHead::init(32, 5, rng);
  const auto x = random_input(bb.config(), rng);
  EXPECT_THROW(bb.forward_with_prompt(x, Tensor::zeros({4, 31}), head), DimensionError);
  EXPECT_EQ(bb.forward_with_prompt(x, Tensor::zeros({4, 32}), head).shape(), Shape{5});
}

TEST(ForwardWithPrompt, RowPermutationChangesInputNotLogits) {
  const FrozenBackbone bb(BackboneConfig{.seed = 8});
  Rng rng = make_rng(8);
  const ClassifierHead head{gaussian_tensor({32, 5}, 0.3, rng), Tensor::zeros({5})};
  const auto x = random_input(bb.config(), rng);
  const Tensor prompt = gaussian_tensor({4, 32}, 1.0, rng);
  const Tensor permuted = ops::concat_rows(std::vector<Tensor>{
      ops::slice_rows(prompt, 2, 2), ops::slice_rows(prompt, 0, 2)});
  EXPECT_NE(bb.embed(x, &prompt), bb.embed(x, &permuted));
  const Tensor a = bb.forward_with_prompt(x, prompt, head);
  const Tensor b = bb.forward_with_prompt(x, permuted, head);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(a[c], b[c], 1e-12);
}

TEST(ForwardWithPrompt, NoGradientReachesBackbone) {
  const FrozenBackbone bb(BackboneConfig{.seed = 12});
  const auto before = bb.checksum();
  Rng rng = make_rng(12);
  const auto x = random_input(bb.config(), rng);
  {
    GradientTape tape;
    const Tensor prompt = tape.watch(gaussian_tensor({4, 32}, 1.0, rng));
    const ClassifierHead head = ClassifierHead::init(32, 5, rng);
    const Tensor loss = ops::cross_entropy(bb.forward_with_prompt(x, prompt, head), 1);
    const Tensor g = tape.backward(loss).wrt(prompt);
    EXPECT_TRUE(g.all_finite());
  }
  EXPECT_EQ(bb.checksum(), before);
}

TEST(ClassifierHead, InitShapes) {
  Rng rng = make_rng(13);
  const ClassifierHead head = ClassifierHead::init(32, 5, rng);
  EXPECT_EQ(head.weight.shape(), (Shape{32, 5}));
  EXPECT_EQ(head.bias, Tensor::zeros({5}));
  EXPECT_EQ(head.classes(), 5u);
  EXPECT_THROW(head.logits(Tensor::zeros({31})), DimensionError);
}
