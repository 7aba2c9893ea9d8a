#pragma once

#include "fedlora/aggregation.hpp"
#include "fedlora/task.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fedlora {

using ClientAdapters = std::map<std::string, LoraPair>;

/// Frozen part of the student: parallel linear heads reading the same input,
/// outputs concatenated in layer order.
struct FrozenModel {
  TaskKind kind = TaskKind::kRegressionTeacher;
  std::vector<std::string> layer_ids;
  std::vector<FrozenLayer> layers;

  static FrozenModel from_task(const SyntheticTask& task, Index layers);

  Index input_dim() const { return layers.front().w0.cols(); }
  Index output_dim() const;
  Index head_offset(std::size_t layer) const;

  // (W0 + residual) applied to every row of x: n x k.
  DenseMatrix base_outputs(const DenseMatrix& x) const;
  // Full model outputs; `base` must be base_outputs(x).
  DenseMatrix outputs(const ClientAdapters& adapters, const DenseMatrix& x,
                      const DenseMatrix& base) const;
};

// Mean loss over the rows: 0.5 * squared error summed over outputs for
// regression, softmax cross-entropy for classification. When `grad` is set
// it receives d(loss)/d(outputs).
double task_loss(TaskKind kind, const DenseMatrix& outputs, const Dataset& data,
                 DenseMatrix* grad = nullptr);

// Higher is better: negative mean squared error per output, or accuracy.
double task_metric(TaskKind kind, const DenseMatrix& outputs,
                   const Dataset& data);

enum class LocalConstraint { kNone, kFreezeA, kKeepLocalB };

struct LocalTrainConfig {
  // Exactly one of epochs / steps drives the loop; steps wins when set.
  int epochs = 10;
  std::optional<int> steps;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  LocalConstraint constraint = LocalConstraint::kNone;
  std::uint64_t seed = 0;  // already specific to (experiment, client, round)
};

struct LocalTrainResult {
  ClientUpdate update;
  double mean_loss = 0.0;  // mean mini-batch loss over the run
};

/// Mini-batch SGD on the adapters only. kFreezeA leaves every A bitwise
/// unchanged; kKeepLocalB trains as kNone (B simply stays on the client).
LocalTrainResult local_train(const FrozenModel& model, const Dataset& data,
                             const ClientAdapters& start,
                             const LocalTrainConfig& config,
                             const std::string& client_id);

}  // namespace fedlora
