#pragma once

#include "fedlora/aggregation.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedlora {

struct LayerShape {
  Index k = 0;  // output dim
  Index d = 0;  // input dim
  Index r = 0;  // adapter rank
};

// Bytes per entry for a declared precision of 16, 32 or 64 bits.
std::uint64_t bytes_per_entry(int precision_bits);

/// Per-client traffic for one round.
struct CommEntry {
  std::uint64_t up_entries = 0;
  std::uint64_t down_entries = 0;
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
};

// `client_ranks` is only consulted by STACK (download depends on sum r_u);
// when empty every client is assumed to use the layer's rank.
CommEntry comm_account(Strategy strategy, std::span<const LayerShape> shapes,
                       std::size_t clients, int precision_bits,
                       std::span<const Index> client_ranks = {});

enum class Direction { kUp, kDown };

class CommLedger {
 public:
  struct Row {
    int round = 0;
    std::size_t client = 0;
    Direction direction = Direction::kUp;
    std::uint64_t entries = 0;
    std::uint64_t bytes = 0;
  };

  void record(int round, std::size_t client, Direction direction,
              std::uint64_t entries, std::uint64_t bytes);

  const std::vector<Row>& rows() const { return rows_; }
  std::uint64_t total_bytes() const { return total_bytes_; }
  std::uint64_t total_entries() const { return total_entries_; }
  std::uint64_t round_bytes(int round) const;

  // round,client,dir,entries,bytes
  std::string to_csv() const;

 private:
  std::vector<Row> rows_;
  std::uint64_t total_bytes_ = 0;
  std::uint64_t total_entries_ = 0;
};

}  // namespace fedlora
