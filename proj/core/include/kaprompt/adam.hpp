#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kaprompt/tensor.hpp"

namespace kaprompt {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment accumulators, one pair per parameter. Empty until the first step,
// after which the shapes are pinned to the parameters they track.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

// One bias-corrected Adam update, in place. Parameters must be untaped values.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
               AdamState& state);

}  // namespace kaprompt
