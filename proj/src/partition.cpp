#include "fedlora/partition.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace fedlora {

std::size_t Partition::total() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.size();
  return n;
}

namespace {

std::vector<double> draw_dirichlet(std::size_t n, double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> p(n);
  double sum = 0.0;
  for (auto& v : p) {
    v = gamma(rng);
    sum += v;
  }
  if (!(sum > 0.0)) {
    // Every draw underflowed (tiny alpha); put the mass on one client.
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::fill(p.begin(), p.end(), 0.0);
    p[pick(rng)] = 1.0;
    return p;
  }
  for (auto& v : p) v /= sum;
  return p;
}

Partition draw_once(const std::map<int, std::vector<std::size_t>>& by_group,
                    std::size_t clients, double alpha, Rng& rng) {
  Partition part;
  part.clients.resize(clients);
  for (const auto& [group, members] : by_group) {
    std::vector<std::size_t> shuffled = members;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const std::vector<double> props = draw_dirichlet(clients, alpha, rng);
    // Cut points at the cumulative proportions.
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t u = 0; u < clients; ++u) {
      cumulative += props[u];
      std::size_t end =
          u + 1 == clients
              ? shuffled.size()
              : std::min(shuffled.size(),
                         static_cast<std::size_t>(std::floor(
                             cumulative * static_cast<double>(shuffled.size()))));
      end = std::max(end, begin);
      part.clients[u].insert(part.clients[u].end(), shuffled.begin() + begin,
                             shuffled.begin() + end);
      begin = end;
    }
  }
  return part;
}

bool satisfies(const Partition& part, std::size_t min_per_client) {
  return std::all_of(part.clients.begin(), part.clients.end(),
                     [&](const auto& c) { return c.size() >= min_per_client; });
}

}  // namespace

Partition dirichlet_partition(const std::vector<int>& groups,
                              std::size_t clients, double alpha,
                              std::uint64_t seed,
                              std::size_t min_per_client) {
  if (clients < 1) throw Error(ErrorCode::kInvalidSpec, "clients must be >= 1");
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "dirichlet alpha must be positive");
  }
  min_per_client = std::max<std::size_t>(min_per_client, 1);
  if (groups.size() < clients * min_per_client) {
    throw Error(ErrorCode::kInsufficientSamples,
                fmt::format("{} samples cannot give {} clients {} each",
                            groups.size(), clients, min_per_client));
  }
  std::map<int, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < groups.size(); ++i) by_group[groups[i]].push_back(i);

  Rng rng = make_rng(seed, StreamTag::kPartition);
  Partition part;
  constexpr int kMaxDraws = 100;
  for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
    part = draw_once(by_group, clients, alpha, rng);
    if (satisfies(part, min_per_client)) break;
  }
  // Rebalance: move samples from the currently largest client.
  while (!satisfies(part, min_per_client)) {
    auto shortest = std::min_element(
        part.clients.begin(), part.clients.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    auto largest = std::max_element(
        part.clients.begin(), part.clients.end(),
        [](const auto& a, const auto& b) { return a.size() < b.size(); });
    shortest->push_back(largest->back());
    largest->pop_back();
  }
  for (auto& c : part.clients) std::sort(c.begin(), c.end());
  return part;
}

std::vector<ClientSplit> split_train_test(const Partition& partition,
                                          double test_fraction,
                                          std::uint64_t seed) {
  std::vector<ClientSplit> out(partition.clients.size());
  for (std::size_t u = 0; u < partition.clients.size(); ++u) {
    std::vector<std::size_t> idx = partition.clients[u];
    Rng rng = make_rng(seed, StreamTag::kTestSplit, {u});
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n_test = static_cast<std::size_t>(
        std::round(test_fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    else n_test = 0;
    out[u].test.assign(idx.begin(), idx.begin() + n_test);
    out[u].train.assign(idx.begin() + n_test, idx.end());
    std::sort(out[u].test.begin(), out[u].test.end());
    std::sort(out[u].train.begin(), out[u].train.end());
  }
  return out;
}

}  // namespace fedlora
