#pragma once

#include <cstddef>
#include <vector>

#include "kaprompt/experiment_config.hpp"
#include "kaprompt/random.hpp"
#include "kaprompt/sample.hpp"
#include "kaprompt/tensor.hpp"

namespace kaprompt {

struct SyntheticDomainSpec {
  std::size_t domain = 0;
  Tensor rotation;                   // input_dim x input_dim, orthogonal
  std::vector<Tensor> class_means;   // C vectors of length input_dim
  double noise_std = 0.0;
  double scale = 1.0;
  std::size_t train_count = 0;
  std::size_t test_count = 0;
};

struct DomainData {
  SyntheticDomainSpec spec;
  Dataset train;
  Dataset test;
};

// Gram-Schmidt Q factor of I + strength * G with G standard Gaussian.
// strength = 0 yields the identity.
Tensor random_rotation(std::size_t n, double strength, Rng& rng);

// x = scale * R * (mu_c + eps), eps ~ N(0, sigma^2 I). Labels cycle through
// the classes so every class count is within one of the others.
Dataset sample_domain(const SyntheticDomainSpec& spec, std::size_t count, Rng& rng);

// T domains sharing one set of class means. Noise grows linearly from
// noise_min to noise_max and train counts shrink by train_decrement per
// domain. Fully determined by data.seed.
std::vector<DomainData> generate_stream(const ExperimentConfig& config);

}  // namespace kaprompt
