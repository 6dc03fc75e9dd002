#include "kaprompt/checksum.hpp"

#include <cstring>

namespace kaprompt {

std::uint64_t fnv1a(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t hash = seed;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      hash ^= b;
      hash *= 0x100000001b3ull;
    }
  }
  return hash;
}

}  // namespace kaprompt
