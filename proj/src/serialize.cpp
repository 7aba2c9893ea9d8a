#include "fedlora/serialize.hpp"

#include "json.hpp"

namespace fedlora {

std::string aggregate_result_json(const AggregateResult& result) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["strategy"] = std::string(to_string(result.strategy));
  j["layers"] = ordered_json::object();
  for (const auto& [id, layer] : result.layers) {
    ordered_json l;
    l["scale"] = layer.scale;
    l["ideal_delta"] = dump_matrix(layer.ideal_delta);
    l["has_a_bar"] = layer.a_bar.has_value();
    l["has_b_bar"] = layer.b_bar.has_value();
    l["has_residual"] = layer.residual.has_value();
    if (layer.a_bar) l["a_bar"] = dump_matrix(*layer.a_bar);
    if (layer.b_bar) l["b_bar"] = dump_matrix(*layer.b_bar);
    if (layer.residual) l["residual"] = dump_matrix(*layer.residual);
    if (layer.coefficients) {
      const auto& c = *layer.coefficients;
      l["coefficients"] = {
          {"p", std::vector<double>(c.p.data(), c.p.data() + c.p.size())},
          {"q", std::vector<double>(c.q.data(), c.q.data() + c.q.size())},
          {"initial_objective", c.initial_objective},
          {"final_objective", c.final_objective}};
    } else {
      l["coefficients"] = nullptr;
    }
    j["layers"][id] = l;
  }
  return j.dump(2);
}

}  // namespace fedlora
