#pragma once

#include "fedlora/aggregation.hpp"

#include <map>
#include <optional>
#include <string>

namespace fedlora {

struct DivergenceReport {
  // ||approx - ideal||_F / ||ideal||_F per layer; absent for layers whose
  // ideal delta is zero.
  std::map<std::string, std::optional<double>> normalized;
  // ||approx - ideal||_F per layer.
  std::map<std::string, double> raw;
  // Mean over layers of the normalized gaps (mean of raw gaps when
  // normalization is off or undefined everywhere).
  std::optional<double> aggregate;
  // Frobenius norm of the concatenated per-layer gaps and its square, the
  // divergence rho = ||ideal - approx||^2.
  double raw_gap = 0.0;
  double rho = 0.0;
};

/// FedSA has no global B: each client's B_u is paired with the aggregated A
/// and the per-client gaps are averaged.
DivergenceReport divergence(const AggregateResult& result,
                            bool normalize = true);

std::string divergence_json(const DivergenceReport& report);

}  // namespace fedlora
