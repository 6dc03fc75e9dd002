#pragma once

#include <cstdint>
#include <span>

namespace kaprompt {

// FNV-1a over the raw bytes of a run of doubles. Chainable through `seed`.
std::uint64_t fnv1a(std::span<const double> values,
                    std::uint64_t seed = 0xcbf29ce484222325ull);

}  // namespace kaprompt
