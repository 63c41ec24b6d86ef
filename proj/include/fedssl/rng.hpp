// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>

namespace fedssl {

using Rng = std::mt19937_64;

/// Purposes get disjoint streams so adding a consumer never shifts another's draws.
enum class StreamTag : std::uint32_t {
  kModelInit = 1,
  kDataset = 2,
  kPartition = 3,
  kClient = 4,
  kDirections = 5,
};

/// Independent generator for (master seed, purpose, index).
inline Rng derive_rng(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

}  // namespace fedssl
