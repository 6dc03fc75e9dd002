#include <benchmark/benchmark.h>

#include "kaprompt/experiment.hpp"
#include "kaprompt/mining.hpp"
#include "kaprompt/training.hpp"

using namespace kaprompt;

namespace {

std::vector<double> random_input(const BackboneConfig& c, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(c.input_dim());
  for (double& v : x) v = normal(rng);
  return x;
}

void BM_ExtractQuery(benchmark::State& state) {
  const FrozenBackbone bb(BackboneConfig{});
  Rng rng = make_rng(1);
  const auto x = random_input(bb.config(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(bb.extract_query(x));
}
BENCHMARK(BM_ExtractQuery);

void BM_ForwardWithPrompt(benchmark::State& state) {
  const FrozenBackbone bb(BackboneConfig{});
  Rng rng = make_rng(2);
  const auto x = random_input(bb.config(), rng);
  const Tensor prompt = gaussian_tensor({static_cast<std::size_t>(state.range(0)), 32}, 0.1, rng);
  const ClassifierHead head = ClassifierHead::init(32, 5, rng);
  for (auto _ : state) benchmark::DoNotOptimize(bb.forward_with_prompt(x, prompt, head));
}
BENCHMARK(BM_ForwardWithPrompt)->Arg(1)->Arg(4)->Arg(16);

void BM_GreedySelect(benchmark::State& state) {
  const std::size_t rows = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(3);
  PromptPool pool(10, 4, 32);
  for (std::size_t t = 0; t < rows / 10; ++t) pool.add_domain(random_prompt_set(t, 10, 4, 32, rng));
  const Tensor features = gaussian_tensor({200, 32}, 1.0, rng);
  for (auto _ : state) {
    Rng local = make_rng(4);
    benchmark::DoNotOptimize(mining::mine_reusable_prompts(pool, features, local));
  }
}
BENCHMARK(BM_GreedySelect)->Arg(10)->Arg(30)->Arg(60);

void BM_TrainStep(benchmark::State& state) {
  const FrozenBackbone bb(BackboneConfig{});
  Rng rng = make_rng(5);
  Dataset data;
  std::vector<std::vector<double>> xs;
  for (std::size_t i = 0; i < 16; ++i) {
    data.push_back({random_input(bb.config(), rng), i % 5});
    xs.push_back(data.back().x);
  }
  const Tensor queries = bb.extract_features_batch(xs);
  PromptPool history(10, 4, 32);
  if (state.range(0) > 0) history.add_domain(random_prompt_set(0, 10, 4, 32, rng));
  const PromptSet initial = random_prompt_set(1, 10, 4, 32, rng);
  TrainConfig config;
  config.epochs = 1;
  for (auto _ : state) {
    ClassifierHead head = ClassifierHead::init(32, 5, rng);
    benchmark::DoNotOptimize(
        training::train_domain(data, queries, initial, history, bb, head, config, 1));
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
