#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "rrwkv/tensor.hpp"

namespace rrwkv {

using Rng = std::mt19937_64;

// Stable 64-bit mix of a base seed and an item identifier (FNV-1a fed into splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::string_view item_id);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t item);

Tensor uniform_tensor(Shape shape, Rng& rng, double lo, double hi);
Tensor normal_tensor(Shape shape, Rng& rng, double stddev);

}  // namespace rrwkv
