#pragma once

#include "fedlora/aggregation.hpp"

#include <string>

namespace fedlora {

// JSON document: strategy name, per-layer matrix dumps in the text fixture
// format, presence flags, and coefficient vectors for FLORA_NA.
std::string aggregate_result_json(const AggregateResult& result);

}  // namespace fedlora
