#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "kaprompt/tensor.hpp"

namespace kaprompt {

using Rng = std::mt19937_64;

// Independent stream derived from a base seed and a path of stream labels,
// e.g. make_rng(seed, {domain, kInitStream}). Every random draw in the
// library goes through a stream made here so runs are reproducible.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng);
Tensor uniform_tensor(Shape shape, double low, double high, Rng& rng);

}  // namespace kaprompt
