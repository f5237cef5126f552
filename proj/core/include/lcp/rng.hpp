#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lcp {

using Rng = std::mt19937_64;

// Expands a master seed into an independent, named sub-stream seed
// ("sim", "init", "shuffle", "augment", ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

inline Rng make_stream(std::uint64_t master, std::string_view stream) {
  return Rng(derive_seed(master, stream));
}

}  // namespace lcp
