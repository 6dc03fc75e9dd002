#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kaprompt/checkpoint.hpp"
#include "kaprompt/errors.hpp"
#include "kaprompt/experiment.hpp"
#include "kaprompt/experiment_config.hpp"
#include "kaprompt/synthetic.hpp"

namespace fs = std::filesystem;
using namespace kaprompt;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  std::string checkpoint;
  std::string method;
  std::size_t shuffles = 4;
  std::size_t num_seeds = 5;
  std::uint64_t first_seed = 0;
};

ExperimentConfig resolve_config(const Options& o) {
  ExperimentConfig c = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  if (o.seed) apply_seed(c, *o.seed);
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (!o.method.empty()) c.method = parse_method(o.method);
  if (c.output_dir.empty()) c.output_dir = "results";
  c.validate();
  return c;
}

std::vector<Dataset> test_sets_for(const ExperimentConfig& c, std::size_t domains) {
  const auto stream = generate_stream(c);
  std::vector<Dataset> sets;
  for (std::size_t d = 0; d < domains && d < stream.size(); ++d) sets.push_back(stream[d].test);
  return sets;
}

CheckpointData open_checkpoint(const Options& o, const ExperimentConfig& c) {
  if (!fs::exists(o.checkpoint)) throw CheckpointError("checkpoint not found: " + o.checkpoint);
  CheckpointExpectation expect;
  expect.prompts_per_domain = c.prompts_per_domain;
  expect.prompt_length = c.prompt_length;
  expect.dim = c.backbone.dim;
  expect.classes = c.data.num_classes;
  return load_checkpoint(o.checkpoint, expect);
}

int run_generate(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const auto stream = generate_stream(c);
  const fs::path dir = fs::path(c.output_dir) / "data";
  for (const DomainData& d : stream) {
    const std::string stem = "domain_" + std::to_string(d.spec.domain);
    write_dataset_csv(dir / (stem + "_train.csv"), d.train);
    write_dataset_csv(dir / (stem + "_test.csv"), d.test);
  }
  std::cout << "wrote " << stream.size() << " domains to " << dir.string() << "\n";
  return 0;
}

int run_train(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const ExperimentResult r = run_experiment(c);
  const auto& last = r.accuracy.row(c.data.num_domains - 1);
  std::cout << method_name(c.method) << " avg_acc " << format_number(avg_acc(last)) << "\n";
  return 0;
}

int run_eval(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const CheckpointData ckpt = open_checkpoint(o, c);
  const auto tests = test_sets_for(c, ckpt.pool.num_domains());
  if (tests.size() != ckpt.pool.num_domains()) {
    throw ConfigError("checkpoint covers more domains than the config generates");
  }
  const auto row = evaluate(ckpt.pool, ckpt.backbone, ckpt.head, tests, c.train.top_k);
  for (std::size_t i = 0; i < row.size(); ++i) {
    std::cout << "domain " << i << " accuracy " << format_number(row[i]) << "\n";
  }
  std::cout << "avg_acc " << format_number(avg_acc(row)) << "\n";
  return 0;
}

int run_ablate(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  const CheckpointData ckpt = open_checkpoint(o, c);
  const auto tests = test_sets_for(c, ckpt.pool.num_domains());
  if (tests.size() != ckpt.pool.num_domains()) {
    throw ConfigError("checkpoint covers more domains than the config generates");
  }
  const auto rows = shuffle_ablation(ckpt, tests, c.train.top_k, o.shuffles, c.train.seed);
  write_ablation_csv(fs::path(c.output_dir) / "ablation.csv", rows);
  for (const AblationRow& r : rows) {
    std::cout << r.condition << " avg_acc " << format_number(r.avg_acc) << "\n";
  }
  return 0;
}

int run_compare(const Options& o) {
  const ExperimentConfig c = resolve_config(o);
  std::vector<std::uint64_t> seeds;
  const std::uint64_t base = o.seed.value_or(o.first_seed);
  for (std::size_t i = 0; i < o.num_seeds; ++i) seeds.push_back(base + i);
  const CompareSummary s = compare_arms(c, seeds);
  write_compare_csv(fs::path(c.output_dir) / "compare.csv", s);
  std::cout << "seed ka_prompt baseline_independent\n";
  for (const CompareRow& r : s.rows) {
    std::cout << r.seed << ' ' << format_number(r.ka_prompt) << ' ' << format_number(r.baseline)
              << "\n";
  }
  std::cout << "mean " << format_number(s.mean_ka_prompt) << ' '
            << format_number(s.mean_baseline) << "\n";
  std::cout << "ka_prompt wins " << s.ka_wins << "/" << s.rows.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-pool domain incremental learning on synthetic streams"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override training, backbone and data seeds");
    sub->add_option("--output-dir", o.output_dir, "Directory for result files");
  };

  CLI::App* generate = app.add_subcommand("generate", "Write the synthetic datasets as CSV");
  add_common(generate);
  CLI::App* train = app.add_subcommand("train", "Run the sequential experiment");
  add_common(train);
  train->add_option("--method", o.method, "ka_prompt or baseline_independent");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test sets");
  add_common(eval);
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  CLI::App* ablate = app.add_subcommand("ablate", "Prompt component shuffle ablation");
  add_common(ablate);
  ablate->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  ablate->add_option("--shuffles", o.shuffles, "Number of shuffle conditions");
  CLI::App* compare = app.add_subcommand("compare", "Run both arms over several seeds");
  add_common(compare);
  compare->add_option("--seeds", o.num_seeds, "Number of seeds")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  for (CLI::App* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) o.seed = seed;
  }

  try {
    if (generate->parsed()) return run_generate(o);
    if (train->parsed()) return run_train(o);
    if (eval->parsed()) return run_eval(o);
    if (ablate->parsed()) return run_ablate(o);
    return run_compare(o);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
