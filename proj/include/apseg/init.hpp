#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "apseg/autodiff.hpp"
#include "apseg/rng.hpp"

namespace apseg {

/// He-normal weight tensor for a layer with the given fan-in.
inline ad::Parameter he_normal(std::string name, std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double sd = std::sqrt(2.0 / fan_in);
  for (auto& v : t.data) v = sd * rng.normal();
  return ad::Parameter(std::move(name), std::move(t));
}

inline ad::Parameter filled(std::string name, std::vector<int> shape, double value) {
  return ad::Parameter(std::move(name), Tensor(std::move(shape), value));
}

/// Stable 64-bit mix of a seed with a module tag, so each module draws from
/// its own stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace apseg
