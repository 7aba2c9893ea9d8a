#pragma once

#include "fedlora/config.hpp"
#include "fedlora/decomposition.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fedlora {

struct CellResult {
  RunPlan plan;
  std::vector<RoundLog> logs;
  // First round whose global metric reached the target (1-based).
  std::optional<int> rounds_to_target;
  std::optional<double> target;
  double wall_clock_s = 0.0;
};

struct RunOptions {
  // Cells run concurrently on this many threads; each simulation keeps its
  // own `threads` setting for the client phase.
  int threads = 1;
  // Continue cells from checkpoint.json when present.
  bool resume = false;
};

/// Runs every plan and writes, per cell directory under config.output_dir:
/// rounds.csv, rounds.jsonl, divergence.csv, comm.csv, gengap.csv,
/// summary.json and meta.json (wall-clock data lives only in meta.json so
/// every other file is reproducible byte for byte). Errors are rethrown
/// with the cell's strategy and seed prepended.
std::vector<CellResult> run_cells(const ExperimentConfig& config,
                                  std::span<const RunPlan> plans,
                                  const RunOptions& options = {});

std::vector<CellResult> run_experiment(const ExperimentConfig& config,
                                       const RunOptions& options = {});
std::vector<CellResult> run_sweep(const ExperimentConfig& config,
                                  const RunOptions& options = {});

// Artifact bodies, exposed for schema tests.
std::string rounds_csv(std::span<const RoundLog> logs, std::uint64_t seed);
std::string divergence_csv(std::span<const RoundLog> logs);
std::string gengap_csv(std::span<const RoundLog> logs);
std::string round_log_jsonl(const RoundLog& log);
RoundLog round_log_from_jsonl(const std::string& line);
std::string summary_json(const CellResult& cell);

/// The higher-is-better metric must reach best - (1 - fraction) * |best|.
std::optional<int> rounds_to_target(std::span<const RoundLog> logs,
                                    double target);

/// Tidy plot inputs written to `out_dir` (default run_dir/plots):
/// divergence_vs_round.csv, gengap_vs_round.csv and
/// final_metric_vs_alpha.csv. Raises missing-artifacts when run_dir holds
/// no completed cells.
std::vector<std::filesystem::path> emit_plots_data(
    const std::filesystem::path& run_dir,
    std::optional<std::filesystem::path> out_dir = std::nullopt);

/// Trains one round of clients on the config's task (first seed, FedIT
/// start) and compares the decomposition baselines on layer00's ideal
/// aggregate.
std::vector<ComparisonRow> compare_decomposition(const ExperimentConfig& config);

}  // namespace fedlora
