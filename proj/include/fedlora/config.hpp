#pragma once

#include "fedlora/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

/// Values swept by the `sweep` subcommand; empty lists keep the base value.
struct SweepSpec {
  std::vector<double> dirichlet_alphas;
  std::vector<std::size_t> clients;
};

struct ExperimentConfig {
  // Everything except strategy and seed, which come from the lists below.
  SimulationConfig base;
  std::vector<Strategy> strategies{Strategy::kFedIt, Strategy::kFloraNa};
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "runs";
  // Rounds-to-target threshold as a fraction of the best final global
  // metric among the strategies sharing a seed (absent: not reported).
  std::optional<double> target_fraction;
  // Write a resumable checkpoint after every round.
  bool checkpoint = false;
  SweepSpec sweep;

  void validate() const;
};

/// One (sweep point, strategy, seed) cell.
struct RunPlan {
  SimulationConfig sim;
  // Relative output directory, e.g. "FEDIT/seed-1" or
  // "alpha-0.5_clients-10/FEDIT/seed-1" for sweeps.
  std::filesystem::path subdir;
  std::string sweep_point;  // empty outside sweeps
};

/// Parses YAML text. Unknown keys are rejected; `source` names the document
/// in error messages.
ExperimentConfig parse_config_text(std::string_view text,
                                   std::string_view source = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Effective configuration with every default filled in, as YAML.
std::string config_to_yaml(const ExperimentConfig& config);

/// Documented keys with their defaults, for `--help`.
std::string config_reference();

// strategies x seeds cells.
std::vector<RunPlan> run_plans(const ExperimentConfig& config);
// (alphas x clients) x strategies x seeds cells.
std::vector<RunPlan> sweep_plans(const ExperimentConfig& config);

}  // namespace fedlora
