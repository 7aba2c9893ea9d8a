#include "fedlora/trainer.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fedlora {

FrozenModel FrozenModel::from_task(const SyntheticTask& task, Index layers) {
  if (layers < 1 || task.output_dim % layers != 0) {
    throw Error(ErrorCode::kInvalidSpec, "output dim not divisible by layers");
  }
  FrozenModel model;
  model.kind = task.kind;
  const Index head = task.output_dim / layers;
  for (Index l = 0; l < layers; ++l) {
    model.layer_ids.push_back(fmt::format("layer{:02d}", l));
    model.layers.push_back(
        FrozenLayer::from_weight(task.pretrained.middleRows(l * head, head)));
  }
  return model;
}

Index FrozenModel::output_dim() const {
  Index k = 0;
  for (const auto& l : layers) k += l.w0.rows();
  return k;
}

Index FrozenModel::head_offset(std::size_t layer) const {
  Index off = 0;
  for (std::size_t l = 0; l < layer; ++l) off += layers[l].w0.rows();
  return off;
}

DenseMatrix FrozenModel::base_outputs(const DenseMatrix& x) const {
  DenseMatrix out(x.rows(), output_dim());
  Index off = 0;
  for (const auto& layer : layers) {
    out.middleCols(off, layer.w0.rows()).noalias() =
        x * layer.base().transpose();
    off += layer.w0.rows();
  }
  return out;
}

DenseMatrix FrozenModel::outputs(const ClientAdapters& adapters,
                                 const DenseMatrix& x,
                                 const DenseMatrix& base) const {
  DenseMatrix out = base;
  Index off = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LoraPair& pair = adapters.at(layer_ids[l]);
    out.middleCols(off, pair.out_dim()).noalias() +=
        pair.scale() * ((x * pair.a.transpose()) * pair.b.transpose());
    off += pair.out_dim();
  }
  return out;
}

double task_loss(TaskKind kind, const DenseMatrix& outputs, const Dataset& data,
                 DenseMatrix* grad) {
  const auto n = static_cast<double>(outputs.rows());
  if (outputs.rows() == 0) return 0.0;
  if (kind == TaskKind::kRegressionTeacher) {
    const DenseMatrix diff = outputs - data.y;
    if (grad != nullptr) *grad = diff / n;
    return 0.5 * diff.squaredNorm() / n;
  }
  double loss = 0.0;
  if (grad != nullptr) grad->resize(outputs.rows(), outputs.cols());
  for (Index i = 0; i < outputs.rows(); ++i) {
    const double peak = outputs.row(i).maxCoeff();
    Eigen::RowVectorXd e = (outputs.row(i).array() - peak).exp();
    const double z = e.sum();
    const int label = data.labels[i];
    loss += std::log(z) - (outputs(i, label) - peak);
    if (grad != nullptr) {
      grad->row(i) = e / (z * n);
      (*grad)(i, label) -= 1.0 / n;
    }
  }
  return loss / n;
}

double task_metric(TaskKind kind, const DenseMatrix& outputs,
                   const Dataset& data) {
  if (outputs.rows() == 0) {
    throw Error(ErrorCode::kEmptyTestSet, "cannot evaluate on zero samples");
  }
  if (kind == TaskKind::kRegressionTeacher) {
    return -(outputs - data.y).squaredNorm() / static_cast<double>(outputs.size());
  }
  std::size_t correct = 0;
  for (Index i = 0; i < outputs.rows(); ++i) {
    Index arg = 0;
    outputs.row(i).maxCoeff(&arg);
    if (arg == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(outputs.rows());
}

LocalTrainResult local_train(const FrozenModel& model, const Dataset& data,
                             const ClientAdapters& start,
                             const LocalTrainConfig& config,
                             const std::string& client_id) {
  if (data.size() == 0) {
    throw Error(ErrorCode::kInsufficientSamples,
                fmt::format("client '{}' has no training data", client_id));
  }
  if (data.x.cols() != model.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "data does not match model input");
  }
  if (config.batch_size < 1) {
    throw Error(ErrorCode::kInvalidSpec, "batch size must be >= 1");
  }

  ClientAdapters adapters = start;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LoraPair& pair = adapters.at(model.layer_ids[l]);
    pair.validate();
    if (pair.out_dim() != model.layers[l].w0.rows() ||
        pair.in_dim() != model.layers[l].w0.cols()) {
      throw Error(ErrorCode::kShapeMismatch,
                  fmt::format("adapter '{}' does not fit its layer",
                              model.layer_ids[l]));
    }
  }

  // The frozen part is fixed for the whole local run.
  const DenseMatrix base_all = model.base_outputs(data.x);
  const std::size_t n = data.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps =
      config.steps ? static_cast<std::size_t>(std::max(*config.steps, 0))
                   : static_cast<std::size_t>(std::max(config.epochs, 0)) *
                         batches_per_epoch;

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double loss_sum = 0.0;
  std::size_t cursor = n;  // forces a shuffle before the first batch
  Dataset mb;
  DenseMatrix mb_base;
  DenseMatrix grad;
  for (std::size_t step = 0; step < total_steps; ++step) {
    if (cursor >= n) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t take = std::min(batch, n - cursor);
    std::vector<std::size_t> rows(order.begin() + cursor,
                                  order.begin() + cursor + take);
    cursor += take;

    mb = subset(data, rows);
    mb_base.resize(static_cast<Index>(take), base_all.cols());
    for (std::size_t i = 0; i < take; ++i) {
      mb_base.row(i) = base_all.row(rows[i]);
    }
    const DenseMatrix out = model.outputs(adapters, mb.x, mb_base);
    const double loss = task_loss(model.kind, out, mb, &grad);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kDivergenceDetected,
                  fmt::format("client '{}' loss became non-finite at step {} "
                              "(learning rate too high?)",
                              client_id, step));
    }
    loss_sum += loss;
    if (config.learning_rate == 0.0) continue;

    // task_loss already divides by the batch size.
    Index off = 0;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      LoraPair& pair = adapters.at(model.layer_ids[l]);
      const LoraGradients g = lora_gradients(
          model.layers[l], pair, mb.x, grad.middleCols(off, pair.out_dim()));
      off += pair.out_dim();
      if (config.constraint != LocalConstraint::kFreezeA) {
        pair.a -= config.learning_rate * g.a;
      }
      pair.b -= config.learning_rate * g.b;
    }
  }

  for (const auto& [id, pair] : adapters) {
    if (!pair.a.allFinite() || !pair.b.allFinite()) {
      throw Error(ErrorCode::kDivergenceDetected,
                  fmt::format("client '{}' produced non-finite adapters for "
                              "layer '{}'",
                              client_id, id));
    }
  }

  LocalTrainResult result;
  result.update.client_id = client_id;
  result.update.adapters = std::move(adapters);
  result.update.sample_count = n;
  result.mean_loss = total_steps > 0 ? loss_sum / total_steps : 0.0;
  return result;
}

}  // namespace fedlora
