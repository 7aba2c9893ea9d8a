#include "fedlora/comm.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

namespace fedlora {

std::uint64_t bytes_per_entry(int precision_bits) {
  switch (precision_bits) {
    case 16: return 2;
    case 32: return 4;
    case 64: return 8;
    default:
      throw Error(ErrorCode::kValidationError,
                  fmt::format("precision must be 16, 32 or 64 bits, got {}",
                              precision_bits));
  }
}

CommEntry comm_account(Strategy strategy, std::span<const LayerShape> shapes,
                       std::size_t clients, int precision_bits,
                       std::span<const Index> client_ranks) {
  const std::uint64_t width = bytes_per_entry(precision_bits);
  CommEntry entry;
  for (const LayerShape& s : shapes) {
    const auto k = static_cast<std::uint64_t>(s.k);
    const auto d = static_cast<std::uint64_t>(s.d);
    const auto r = static_cast<std::uint64_t>(s.r);
    const std::uint64_t pair = k * r + r * d;
    switch (strategy) {
      case Strategy::kFedIt:
      case Strategy::kFloraNa:
        entry.up_entries += pair;
        entry.down_entries += pair;
        break;
      case Strategy::kFfa:
        entry.up_entries += k * r;
        entry.down_entries += k * r;
        break;
      case Strategy::kFedSa:
        entry.up_entries += r * d;
        entry.down_entries += r * d;
        break;
      case Strategy::kStack: {
        std::uint64_t rank_sum = 0;
        if (client_ranks.empty()) {
          rank_sum = r * clients;
        } else {
          for (Index cr : client_ranks) rank_sum += static_cast<std::uint64_t>(cr);
        }
        entry.up_entries += pair;
        entry.down_entries += (k + d) * rank_sum;
        break;
      }
      case Strategy::kFedEx:
        entry.up_entries += pair;
        entry.down_entries += pair + k * d;
        break;
      case Strategy::kIdeal:
        // Full-parameter reference: the dense ideal delta plus the shared A.
        entry.up_entries += pair;
        entry.down_entries += k * d + r * d;
        break;
    }
  }
  entry.up_bytes = entry.up_entries * width;
  entry.down_bytes = entry.down_entries * width;
  return entry;
}

void CommLedger::record(int round, std::size_t client, Direction direction,
                        std::uint64_t entries, std::uint64_t bytes) {
  rows_.push_back({round, client, direction, entries, bytes});
  total_bytes_ += bytes;
  total_entries_ += entries;
}

std::uint64_t CommLedger::round_bytes(int round) const {
  std::uint64_t sum = 0;
  for (const Row& row : rows_) {
    if (row.round == round) sum += row.bytes;
  }
  return sum;
}

std::string CommLedger::to_csv() const {
  std::string out = "round,client,dir,entries,bytes\n";
  for (const Row& row : rows_) {
    out += fmt::format("{},{},{},{},{}\n", row.round, row.client,
                       row.direction == Direction::kUp ? "up" : "down",
                       row.entries, row.bytes);
  }
  return out;
}

}  // namespace fedlora
