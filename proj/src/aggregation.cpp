#include "fedlora/aggregation.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace fedlora {

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kIdeal: return "IDEAL";
    case Strategy::kFedIt: return "FEDIT";
    case Strategy::kFfa: return "FFA";
    case Strategy::kFedSa: return "FEDSA";
    case Strategy::kStack: return "STACK";
    case Strategy::kFedEx: return "FEDEX";
    case Strategy::kFloraNa: return "FLORA_NA";
  }
  return "UNKNOWN";
}

Strategy strategy_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) {
    return c == '-' ? '_' : static_cast<char>(std::toupper(c));
  });
  for (Strategy s : kAllStrategies) {
    if (to_string(s) == upper) return s;
  }
  throw Error(ErrorCode::kValidationError,
              fmt::format("unknown strategy '{}'", name));
}

ClientWeights ClientWeights::uniform(std::size_t clients) {
  if (clients == 0) throw Error(ErrorCode::kEmptyUpdateList, "no clients");
  return {std::vector<double>(clients, 1.0 / static_cast<double>(clients))};
}

ClientWeights ClientWeights::by_samples(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::kEmptyUpdateList, "no clients");
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.sample_count);
  ClientWeights w;
  for (const auto& u : updates) {
    w.values.push_back(static_cast<double>(u.sample_count) / total);
  }
  return w;
}

void ClientWeights::validate(std::size_t clients) const {
  if (values.size() != clients) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{} weights for {} clients", values.size(),
                            clients));
  }
  double sum = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidSpec, "client weights must be >= 0");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("client weights sum to {}", sum));
  }
}

std::optional<DenseMatrix> LayerAggregate::approx_delta() const {
  if (!a_bar || !b_bar) return std::nullopt;
  DenseMatrix delta = scale * ((*b_bar) * (*a_bar));
  if (residual) delta += *residual;
  return delta;
}

namespace {

// Validates the round's uploads and returns the layer ids in order.
std::vector<std::string> check_updates(std::span<const ClientUpdate> updates,
                                       const ClientWeights& w,
                                       bool require_uniform_rank) {
  if (updates.empty()) {
    throw Error(ErrorCode::kEmptyUpdateList, "aggregation needs >= 1 update");
  }
  w.validate(updates.size());
  const auto& first = updates.front();
  std::vector<std::string> ids;
  for (const auto& [id, pair] : first.adapters) ids.push_back(id);

  for (const auto& update : updates) {
    if (update.sample_count < 1) {
      throw Error(ErrorCode::kInvalidSpec,
                  fmt::format("client '{}' reports zero samples",
                              update.client_id));
    }
    if (update.adapters.size() != first.adapters.size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("client '{}' has {} layers, expected {}",
                              update.client_id, update.adapters.size(),
                              first.adapters.size()));
    }
    for (const auto& id : ids) {
      auto it = update.adapters.find(id);
      if (it == update.adapters.end()) {
        throw Error(ErrorCode::kShapeMismatch,
                    fmt::format("client '{}' lacks layer '{}'",
                                update.client_id, id));
      }
      const LoraPair& pair = it->second;
      const LoraPair& ref = first.adapters.at(id);
      pair.validate();
      if (pair.out_dim() != ref.out_dim() || pair.in_dim() != ref.in_dim()) {
        throw Error(ErrorCode::kShapeMismatch,
                    fmt::format("layer '{}' of client '{}' is {}x{}, expected "
                                "{}x{}",
                                id, update.client_id, pair.out_dim(),
                                pair.in_dim(), ref.out_dim(), ref.in_dim()));
      }
      if (require_uniform_rank &&
          (pair.rank() != ref.rank() || pair.alpha != ref.alpha)) {
        throw Error(ErrorCode::kShapeMismatch,
                    fmt::format("layer '{}': strategy requires uniform rank "
                                "and alpha across clients",
                                id));
      }
    }
  }
  return ids;
}

DenseMatrix ideal_delta_for(std::span<const ClientUpdate> updates,
                            const ClientWeights& w, const std::string& id) {
  const LoraPair& ref = updates.front().adapters.at(id);
  DenseMatrix sum = DenseMatrix::Zero(ref.out_dim(), ref.in_dim());
  for (std::size_t u = 0; u < updates.size(); ++u) {
    const LoraPair& pair = updates[u].adapters.at(id);
    sum += (w.values[u] * pair.scale()) * (pair.b * pair.a);
  }
  return sum;
}

DenseMatrix weighted_a(std::span<const ClientUpdate> updates,
                       const ClientWeights& w, const std::string& id) {
  DenseMatrix sum = DenseMatrix::Zero(updates.front().adapters.at(id).a.rows(),
                                      updates.front().adapters.at(id).a.cols());
  for (std::size_t u = 0; u < updates.size(); ++u) {
    sum += w.values[u] * updates[u].adapters.at(id).a;
  }
  return sum;
}

DenseMatrix weighted_b(std::span<const ClientUpdate> updates,
                       const ClientWeights& w, const std::string& id) {
  DenseMatrix sum = DenseMatrix::Zero(updates.front().adapters.at(id).b.rows(),
                                      updates.front().adapters.at(id).b.cols());
  for (std::size_t u = 0; u < updates.size(); ++u) {
    sum += w.values[u] * updates[u].adapters.at(id).b;
  }
  return sum;
}

}  // namespace

AggregateResult aggregate_ideal(std::span<const ClientUpdate> updates,
                                const ClientWeights& w) {
  AggregateResult result{Strategy::kIdeal, {}};
  for (const auto& id : check_updates(updates, w, false)) {
    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate_fedit(std::span<const ClientUpdate> updates,
                                const ClientWeights& w) {
  AggregateResult result{Strategy::kFedIt, {}};
  for (const auto& id : check_updates(updates, w, true)) {
    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    layer.a_bar = weighted_a(updates, w, id);
    layer.b_bar = weighted_b(updates, w, id);
    layer.scale = updates.front().adapters.at(id).scale();
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate_ffa(
    std::span<const ClientUpdate> updates, const ClientWeights& w,
    const std::map<std::string, DenseMatrix>& frozen_a) {
  AggregateResult result{Strategy::kFfa, {}};
  for (const auto& id : check_updates(updates, w, true)) {
    auto it = frozen_a.find(id);
    if (it == frozen_a.end()) {
      throw Error(ErrorCode::kFrozenViolation,
                  fmt::format("no frozen A registered for layer '{}'", id));
    }
    for (const auto& update : updates) {
      const DenseMatrix& a = update.adapters.at(id).a;
      require_same_shape(a, it->second, "frozen A");
      if ((a - it->second).cwiseAbs().maxCoeff() > 1e-12) {
        throw Error(ErrorCode::kFrozenViolation,
                    fmt::format("client '{}' changed A of layer '{}'",
                                update.client_id, id));
      }
    }
    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    layer.a_bar = it->second;
    layer.b_bar = weighted_b(updates, w, id);
    layer.scale = updates.front().adapters.at(id).scale();
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate_fedsa(std::span<const ClientUpdate> updates,
                                const ClientWeights& w) {
  AggregateResult result{Strategy::kFedSa, {}};
  for (const auto& id : check_updates(updates, w, true)) {
    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    layer.a_bar = weighted_a(updates, w, id);
    layer.scale = updates.front().adapters.at(id).scale();
    for (const auto& update : updates) {
      layer.local_b.push_back(update.adapters.at(id).b);
    }
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate_stack(std::span<const ClientUpdate> updates,
                                const ClientWeights& w) {
  AggregateResult result{Strategy::kStack, {}};
  for (const auto& id : check_updates(updates, w, false)) {
    const LoraPair& ref = updates.front().adapters.at(id);
    Index total_rank = 0;
    for (const auto& update : updates) total_rank += update.adapters.at(id).rank();

    // Client weights and per-client alpha/r_u live in the B blocks so the
    // block product reproduces the weighted ideal sum exactly.
    DenseMatrix a_bar(total_rank, ref.in_dim());
    DenseMatrix b_bar(ref.out_dim(), total_rank);
    const double scale = ref.scale();
    Index offset = 0;
    for (std::size_t u = 0; u < updates.size(); ++u) {
      const LoraPair& pair = updates[u].adapters.at(id);
      a_bar.middleRows(offset, pair.rank()) = pair.a;
      b_bar.middleCols(offset, pair.rank()) =
          (w.values[u] * pair.scale() / scale) * pair.b;
      offset += pair.rank();
    }
    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    layer.a_bar = std::move(a_bar);
    layer.b_bar = std::move(b_bar);
    layer.scale = scale;
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate_fedex(std::span<const ClientUpdate> updates,
                                const ClientWeights& w) {
  AggregateResult result = aggregate_fedit(updates, w);
  result.strategy = Strategy::kFedEx;
  for (auto& [id, layer] : result.layers) {
    layer.residual =
        layer.ideal_delta - layer.scale * ((*layer.b_bar) * (*layer.a_bar));
  }
  return result;
}

NaProblem make_na_problem(std::span<const ClientUpdate> updates,
                          const ClientWeights& w, const std::string& layer_id) {
  NaProblem problem;
  problem.weights = w.values;
  for (const auto& update : updates) {
    const LoraPair& pair = update.adapters.at(layer_id);
    problem.a.push_back(pair.a);
    problem.b.push_back(pair.b);
  }
  return problem;
}

AggregateResult aggregate_flora_na(std::span<const ClientUpdate> updates,
                                   const ClientWeights& w,
                                   const SolverConfig& config) {
  AggregateResult result{Strategy::kFloraNa, {}};
  for (const auto& id : check_updates(updates, w, true)) {
    NaProblem problem = make_na_problem(updates, w, id);
    CoefficientPair coeffs = solve_coefficients(problem, config);

    LayerAggregate layer;
    layer.ideal_delta = ideal_delta_for(updates, w, id);
    DenseMatrix a_bar = DenseMatrix::Zero(problem.a.front().rows(),
                                          problem.a.front().cols());
    DenseMatrix b_bar = DenseMatrix::Zero(problem.b.front().rows(),
                                          problem.b.front().cols());
    for (std::size_t u = 0; u < problem.clients(); ++u) {
      a_bar += coeffs.q[u] * problem.a[u];
      b_bar += coeffs.p[u] * problem.b[u];
    }
    layer.a_bar = std::move(a_bar);
    layer.b_bar = std::move(b_bar);
    layer.scale = updates.front().adapters.at(id).scale();
    layer.coefficients = std::move(coeffs);
    result.layers.emplace(id, std::move(layer));
  }
  return result;
}

AggregateResult aggregate(Strategy strategy,
                          std::span<const ClientUpdate> updates,
                          const ClientWeights& w,
                          const AggregationOptions& options) {
  switch (strategy) {
    case Strategy::kIdeal: return aggregate_ideal(updates, w);
    case Strategy::kFedIt: return aggregate_fedit(updates, w);
    case Strategy::kFfa: return aggregate_ffa(updates, w, options.frozen_a);
    case Strategy::kFedSa: return aggregate_fedsa(updates, w);
    case Strategy::kStack: return aggregate_stack(updates, w);
    case Strategy::kFedEx: return aggregate_fedex(updates, w);
    case Strategy::kFloraNa:
      return aggregate_flora_na(updates, w, options.solver);
  }
  throw Error(ErrorCode::kInvalidSpec, "unknown strategy");
}

}  // namespace fedlora
