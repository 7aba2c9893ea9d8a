#pragma once

#include "fedlora/lora.hpp"
#include "fedlora/na_solver.hpp"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

enum class Strategy { kIdeal, kFedIt, kFfa, kFedSa, kStack, kFedEx, kFloraNa };

inline constexpr std::array<Strategy, 7> kAllStrategies = {
    Strategy::kIdeal, Strategy::kFedIt,  Strategy::kFfa,    Strategy::kFedSa,
    Strategy::kStack, Strategy::kFedEx, Strategy::kFloraNa};

std::string_view to_string(Strategy strategy);
// Accepts the canonical upper-case names (FEDIT, FLORA_NA, ...), any case.
Strategy strategy_from_string(std::string_view name);

struct ClientUpdate {
  std::string client_id;
  std::map<std::string, LoraPair> adapters;
  std::size_t sample_count = 1;
};

struct ClientWeights {
  std::vector<double> values;

  static ClientWeights uniform(std::size_t clients);
  static ClientWeights by_samples(std::span<const ClientUpdate> updates);

  // Non-negative and summing to 1 within 1e-12.
  void validate(std::size_t clients) const;
};

struct LayerAggregate {
  std::optional<DenseMatrix> a_bar;
  std::optional<DenseMatrix> b_bar;
  std::optional<DenseMatrix> residual;
  DenseMatrix ideal_delta;
  std::optional<CoefficientPair> coefficients;
  // Multiplier applied to b_bar * a_bar to obtain a weight update.
  double scale = 1.0;
  // FedSA keeps B on the clients; their B_u are carried here (unscaled) so
  // divergence can be evaluated per client.
  std::vector<DenseMatrix> local_b;

  // scale * b_bar * a_bar (+ residual). Absent when no global B exists.
  std::optional<DenseMatrix> approx_delta() const;
};

struct AggregateResult {
  Strategy strategy = Strategy::kIdeal;
  std::map<std::string, LayerAggregate> layers;
};

struct AggregationOptions {
  SolverConfig solver;
  // FFA only: the A matrices every client must still hold.
  std::map<std::string, DenseMatrix> frozen_a;
};

AggregateResult aggregate_ideal(std::span<const ClientUpdate> updates,
                                const ClientWeights& w);
AggregateResult aggregate_fedit(std::span<const ClientUpdate> updates,
                                const ClientWeights& w);
AggregateResult aggregate_ffa(
    std::span<const ClientUpdate> updates, const ClientWeights& w,
    const std::map<std::string, DenseMatrix>& frozen_a);
AggregateResult aggregate_fedsa(std::span<const ClientUpdate> updates,
                                const ClientWeights& w);
// The only strategy that accepts heterogeneous client ranks.
AggregateResult aggregate_stack(std::span<const ClientUpdate> updates,
                                const ClientWeights& w);
AggregateResult aggregate_fedex(std::span<const ClientUpdate> updates,
                                const ClientWeights& w);
AggregateResult aggregate_flora_na(std::span<const ClientUpdate> updates,
                                   const ClientWeights& w,
                                   const SolverConfig& config);

AggregateResult aggregate(Strategy strategy,
                          std::span<const ClientUpdate> updates,
                          const ClientWeights& w,
                          const AggregationOptions& options = {});

// Per-layer coefficient problem with the alpha/r scale divided out.
NaProblem make_na_problem(std::span<const ClientUpdate> updates,
                          const ClientWeights& w, const std::string& layer_id);

}  // namespace fedlora
