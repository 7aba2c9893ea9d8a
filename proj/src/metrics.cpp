#include "fedlora/metrics.hpp"

#include "fedlora/error.hpp"

#include "json.hpp"

#include <cmath>

namespace fedlora {

namespace {

struct LayerGap {
  double raw = 0.0;
  double raw_sq = 0.0;
  std::optional<double> normalized;
};

LayerGap layer_gap(Strategy strategy, const LayerAggregate& layer,
                   bool normalize) {
  const double ideal_norm = frobenius(layer.ideal_delta);
  LayerGap gap;
  if (strategy == Strategy::kIdeal) {
    if (normalize && ideal_norm > 0.0) gap.normalized = 0.0;
    return gap;
  }
  if (strategy == Strategy::kFedSa) {
    if (!layer.a_bar || layer.local_b.empty()) {
      throw Error(ErrorCode::kInvalidSpec, "FedSA result lacks local B");
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const DenseMatrix& b : layer.local_b) {
      const double g =
          frobenius(layer.scale * (b * (*layer.a_bar)) - layer.ideal_delta);
      sum += g;
      sum_sq += g * g;
    }
    const double n = static_cast<double>(layer.local_b.size());
    gap.raw = sum / n;
    gap.raw_sq = sum_sq / n;
  } else {
    const auto approx = layer.approx_delta();
    if (!approx) throw Error(ErrorCode::kInvalidSpec, "aggregate lacks A or B");
    gap.raw_sq = frobenius_squared(*approx - layer.ideal_delta);
    gap.raw = std::sqrt(gap.raw_sq);
  }
  if (normalize && ideal_norm > 0.0) gap.normalized = gap.raw / ideal_norm;
  return gap;
}

}  // namespace

DivergenceReport divergence(const AggregateResult& result, bool normalize) {
  DivergenceReport report;
  double normalized_sum = 0.0;
  int normalized_count = 0;
  double raw_sum = 0.0;
  for (const auto& [id, layer] : result.layers) {
    const LayerGap gap = layer_gap(result.strategy, layer, normalize);
    report.raw[id] = gap.raw;
    raw_sum += gap.raw;
    report.rho += gap.raw_sq;
    if (normalize) {
      report.normalized[id] = gap.normalized;
      if (gap.normalized) {
        normalized_sum += *gap.normalized;
        ++normalized_count;
      }
    }
  }
  report.raw_gap = std::sqrt(report.rho);
  if (normalized_count > 0) {
    report.aggregate = normalized_sum / normalized_count;
  } else if (!result.layers.empty()) {
    report.aggregate = raw_sum / static_cast<double>(result.layers.size());
  }
  return report;
}

std::string divergence_json(const DivergenceReport& report) {
  nlohmann::ordered_json j;
  j["per_layer"] = nlohmann::ordered_json::object();
  for (const auto& [id, raw] : report.raw) {
    nlohmann::ordered_json entry;
    entry["raw"] = raw;
    auto it = report.normalized.find(id);
    if (it != report.normalized.end() && it->second) {
      entry["normalized"] = *it->second;
    } else {
      entry["normalized"] = nullptr;
    }
    j["per_layer"][id] = entry;
  }
  j["aggregate"] = report.aggregate ? nlohmann::ordered_json(*report.aggregate)
                                    : nlohmann::ordered_json(nullptr);
  j["raw_gap"] = report.raw_gap;
  j["rho"] = report.rho;
  return j.dump(2);
}

}  // namespace fedlora
