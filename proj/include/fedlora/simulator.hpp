#pragma once

#include "fedlora/aggregation.hpp"
#include "fedlora/comm.hpp"
#include "fedlora/compression.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/partition.hpp"
#include "fedlora/task.hpp"
#include "fedlora/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace fedlora {

enum class Weighting { kUniform, kSamples };

struct SimulationConfig {
  TaskSpec task;
  Strategy strategy = Strategy::kFedIt;
  std::size_t clients = 10;
  int rounds = 10;
  // Local loop: `local_steps` overrides `epochs` when set.
  int epochs = 10;
  std::optional<int> local_steps;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  Index rank = 8;
  double lora_alpha = 16.0;
  double dirichlet_alpha = 0.5;
  Weighting weighting = Weighting::kUniform;
  SolverConfig solver;
  CompressionSpec compression;
  int precision_bits = 32;
  // STACK merges the stacked product into the frozen residual; with
  // reinit the next round starts from a fresh Kaiming A, otherwise from the
  // averaged A. B restarts at zero either way.
  bool stack_reinit = true;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct Evaluation {
  double global_metric = 0.0;
  double mean_local_metric = 0.0;
  double gen_gap = 0.0;
};

/// Global metric: every client's round-start model on the shared test set,
/// averaged over clients. Local metric: every client's end-of-round model
/// on its own test split. gen_gap = local - global (metrics are
/// higher-is-better, so a positive gap means overfitting to local data).
Evaluation evaluate(const FrozenModel& global_frozen,
                    std::span<const ClientAdapters> round_start,
                    const FrozenModel& local_frozen,
                    std::span<const ClientAdapters> end_of_round,
                    std::span<const Dataset> local_tests,
                    const Dataset& global_test);

struct RoundLog {
  int round = 0;
  Strategy strategy = Strategy::kFedIt;
  DivergenceReport divergence;
  // Normalized divergence FedIT would have produced from the same uploads.
  std::optional<double> fedit_divergence;
  double global_metric = 0.0;
  double mean_local_metric = 0.0;
  double gen_gap = 0.0;
  double train_loss = 0.0;
  CommEntry comm;  // per client
  std::uint64_t round_up_bytes = 0;
  std::uint64_t round_down_bytes = 0;
  // FLORA_NA only: coefficient objective at init and at the end (summed
  // over layers).
  std::optional<double> na_initial_objective;
  std::optional<double> na_final_objective;
};

struct SimulationState {
  int round = 0;
  FrozenModel model;                        // includes server residuals
  std::vector<ClientAdapters> client_start; // what each client trains from
  std::map<std::string, DenseMatrix> frozen_a;  // FFA
  CommLedger ledger;
};

class Simulation {
 public:
  explicit Simulation(SimulationConfig config);

  RoundLog run_round();

  // Local training of every client from its current start point, without
  // touching the state (one round's uploads).
  std::vector<LocalTrainResult> train_clients() const;

  const SimulationConfig& config() const { return config_; }
  const SimulationState& state() const { return state_; }
  const GeneratedTask& task() const { return task_; }
  const std::vector<Dataset>& client_train() const { return train_; }
  const std::vector<Dataset>& client_test() const { return test_; }
  const Partition& partition() const { return partition_; }

  // Full mutable state as JSON (matrices, round index; RNG streams are
  // keyed by round so the round index is the only counter).
  void save_checkpoint(const std::filesystem::path& path) const;
  // Rebuilds the data from the config, then restores state from `path`.
  static Simulation resume(SimulationConfig config,
                           const std::filesystem::path& path);

 private:
  SimulationConfig config_;
  GeneratedTask task_;
  Partition partition_;
  std::vector<Dataset> train_;
  std::vector<Dataset> test_;
  SimulationState state_;
};

}  // namespace fedlora
