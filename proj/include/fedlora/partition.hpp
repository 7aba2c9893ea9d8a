#pragma once

#include "fedlora/task.hpp"

#include <cstdint>
#include <vector>

namespace fedlora {

struct Partition {
  // Dataset row indices owned by each client, ascending.
  std::vector<std::vector<std::size_t>> clients;

  std::size_t total() const;
};

/// Label-skew split: for every group (cluster id) the group's samples are
/// divided among clients with proportions drawn from Dir(alpha * 1_U).
/// Draws are repeated until every client holds at least `min_per_client`
/// samples; if that keeps failing, samples are moved from the largest
/// clients to the short ones.
Partition dirichlet_partition(const std::vector<int>& groups,
                              std::size_t clients, double alpha,
                              std::uint64_t seed,
                              std::size_t min_per_client = 1);

// Splits each client's indices into (train, test) with `test_fraction` of
// them (at least one when the client has two or more) held out.
struct ClientSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
std::vector<ClientSplit> split_train_test(const Partition& partition,
                                          double test_fraction,
                                          std::uint64_t seed);

}  // namespace fedlora
