#pragma once

#include <cstddef>
#include <vector>

namespace kaprompt {

// One labelled input: a flat vector of num_patches * patch_dim values.
struct Sample {
  std::vector<double> x;
  std::size_t label = 0;
};

using Dataset = std::vector<Sample>;

}  // namespace kaprompt
