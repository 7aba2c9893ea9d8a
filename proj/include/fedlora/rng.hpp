#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlora {

// Stream tags keep seeds for different purposes apart even when the
// remaining key components coincide.
enum class StreamTag : std::uint64_t {
  kTask = 1,
  kPartition = 2,
  kLoraInit = 3,
  kLocalTrain = 4,
  kTestSplit = 5,
  kReinit = 6,
  kFixture = 7,
};

std::uint64_t splitmix64(std::uint64_t x);

// Counter-style key derivation: the seed for a stream depends only on the
// key tuple, never on how many draws other streams have made.
std::uint64_t derive_seed(std::uint64_t base, StreamTag tag,
                          std::initializer_list<std::uint64_t> keys = {});

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, StreamTag tag,
                    std::initializer_list<std::uint64_t> keys = {}) {
  return Rng(derive_seed(base, tag, keys));
}

}  // namespace fedlora
