#pragma once

#include "fedlora/lora.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

enum class TaskKind { kRegressionTeacher, kClusteredClassification };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::kRegressionTeacher;
  Index input_dim = 32;
  // Regression targets or class count. Split evenly across `layers`
  // parallel heads that share the input.
  Index output_dim = 16;
  Index layers = 1;
  int clusters = 2;
  // Rank of the shared shift away from the pretrained weight and of each
  // cluster perturbation.
  Index delta_rank = 4;
  double shift_scale = 1.0;
  double perturbation_scale = 1.0;
  double noise_std = 0.0;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 1000;
  double local_test_fraction = 0.2;

  void validate() const;
};

struct Dataset {
  DenseMatrix x;            // n x d
  DenseMatrix y;            // n x k regression targets (empty for classification)
  std::vector<int> labels;  // classification only
  std::vector<int> cluster;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
};

/// Teacher model: sample x from cluster c is mapped through
/// teacher + perturbations[c]. The pretrained weight the students start
/// from is teacher minus a low-rank shift.
struct SyntheticTask {
  TaskKind kind = TaskKind::kRegressionTeacher;
  Index input_dim = 0;
  Index output_dim = 0;
  Index num_classes = 0;
  DenseMatrix pretrained;  // k x d
  DenseMatrix global_teacher;
  std::vector<DenseMatrix> perturbations;
  double noise_std = 0.0;
};

struct GeneratedTask {
  SyntheticTask task;
  Dataset train;
  Dataset global_test;
};

/// Two clusters get opposite perturbations (+P, -P); more clusters draw
/// independent ones. Deterministic in (spec, seed).
GeneratedTask generate_task(const TaskSpec& spec, std::uint64_t seed);

// Draws `n` fresh samples from the task distribution, clusters uniform.
Dataset sample_dataset(const SyntheticTask& task, std::size_t n,
                       std::uint64_t seed);

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices);

}  // namespace fedlora
