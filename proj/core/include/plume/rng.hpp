#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace plume {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent seed for a named stage from a master seed.
/// Every randomized component takes its seed through this function so that
/// runs are reproducible under a single global seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view tag, std::uint64_t index = 0) {
  return Rng(derive_seed(master, tag, index));
}

}  // namespace plume
