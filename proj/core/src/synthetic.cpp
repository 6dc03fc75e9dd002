#include "kaprompt/synthetic.hpp"

#include <cmath>

#include "kaprompt/errors.hpp"

namespace kaprompt {

namespace {

constexpr std::uint64_t kMeansStream = 0x6d65616e73ull;
constexpr std::uint64_t kDomainStream = 0x646f6d61696eull;

void orthonormalize_columns(std::vector<double>& m, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < n; ++i) proj += m[i * n + k] * m[i * n + j];
        for (std::size_t i = 0; i < n; ++i) m[i * n + j] -= proj * m[i * n + k];
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += m[i * n + j] * m[i * n + j];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw DegenerateVectorError("random_rotation: singular draw");
    for (std::size_t i = 0; i < n; ++i) m[i * n + j] /= norm;
  }
}

}  // namespace

Tensor random_rotation(std::size_t n, double strength, Rng& rng) {
  if (n == 0) throw ConfigError("random_rotation: dimension must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = (i == j ? 1.0 : 0.0) + strength * normal(rng);
  orthonormalize_columns(m, n);
  return Tensor::matrix(n, n, std::move(m));
}

Dataset sample_domain(const SyntheticDomainSpec& spec, std::size_t count, Rng& rng) {
  const std::size_t n = spec.rotation.rows();
  const std::size_t classes = spec.class_means.size();
  if (classes == 0) throw ConfigError("sample_domain: no classes");
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.reserve(count);
  std::vector<double> z(n);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t label = s % classes;
    const Tensor& mean = spec.class_means[label];
    for (std::size_t i = 0; i < n; ++i) z[i] = mean[i] + spec.noise_std * normal(rng);
    Sample sample{std::vector<double>(n, 0.0), label};
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < n; ++c) acc += spec.rotation.at(r, c) * z[c];
      sample.x[r] = spec.scale * acc;
    }
    out.push_back(std::move(sample));
  }
  return out;
}

std::vector<DomainData> generate_stream(const ExperimentConfig& config) {
  config.validate();
  const DataConfig& d = config.data;
  const std::size_t n = config.backbone.input_dim();

  Rng means_rng = make_rng(d.seed, {kMeansStream});
  std::vector<Tensor> means;
  means.reserve(d.num_classes);
  for (std::size_t c = 0; c < d.num_classes; ++c) {
    means.push_back(gaussian_tensor({n}, d.class_separation, means_rng));
  }

  std::vector<DomainData> stream;
  stream.reserve(d.num_domains);
  for (std::size_t t = 0; t < d.num_domains; ++t) {
    Rng rng = make_rng(d.seed, {kDomainStream, t});
    DomainData data;
    SyntheticDomainSpec& spec = data.spec;
    spec.domain = t;
    spec.rotation = random_rotation(n, d.rotation_strength, rng);
    spec.class_means = means;
    const double frac =
        d.num_domains > 1 ? static_cast<double>(t) / static_cast<double>(d.num_domains - 1) : 0.0;
    spec.noise_std = d.noise_min + frac * (d.noise_max - d.noise_min);
    spec.scale = std::uniform_real_distribution<double>(d.scale_min, d.scale_max)(rng);
    spec.train_count = d.train_samples - t * d.train_decrement;
    spec.test_count = d.test_samples;
    data.train = sample_domain(spec, spec.train_count, rng);
    data.test = sample_domain(spec, spec.test_count, rng);
    stream.push_back(std::move(data));
  }
  return stream;
}

}  // namespace kaprompt
