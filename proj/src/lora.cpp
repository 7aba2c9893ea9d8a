#include "fedlora/lora.hpp"

#include "fedlora/error.hpp"
#include "fedlora/rng.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

namespace fedlora {

void LoraPair::validate() const {
  if (rank() < 1 || in_dim() < 1 || out_dim() < 1) {
    throw Error(ErrorCode::kInvalidDimensions, "empty LoRA factor");
  }
  if (b.cols() != rank()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("B has {} columns but rank is {}", b.cols(),
                            rank()));
  }
  if (rank() > std::min(out_dim(), in_dim())) {
    throw Error(ErrorCode::kInvalidDimensions,
                fmt::format("rank {} exceeds min({}, {})", rank(), out_dim(),
                            in_dim()));
  }
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::kInvalidDimensions, "alpha must be positive");
  }
}

FrozenLayer FrozenLayer::from_weight(DenseMatrix w0) {
  FrozenLayer layer;
  layer.residual = DenseMatrix::Zero(w0.rows(), w0.cols());
  layer.w0 = std::move(w0);
  return layer;
}

void validate_adapter_set(const AdapterSet& set) {
  std::set<std::string> seen;
  for (const auto& layer : set) {
    if (!seen.insert(layer.id).second) {
      throw Error(ErrorCode::kInvalidSpec,
                  fmt::format("duplicate layer id '{}'", layer.id));
    }
    layer.lora.validate();
    require_same_shape(layer.frozen.w0, layer.frozen.residual, layer.id);
  }
}

LoraPair init_lora(Index k, Index d, Index r, double alpha,
                   std::uint64_t seed) {
  if (k < 1 || d < 1 || r < 1 || r > std::min(k, d)) {
    throw Error(ErrorCode::kInvalidDimensions,
                fmt::format("init_lora(k={}, d={}, r={})", k, d, r));
  }
  if (!(alpha > 0.0)) {
    throw Error(ErrorCode::kInvalidDimensions, "alpha must be positive");
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(d));
  Rng rng = make_rng(seed, StreamTag::kLoraInit);
  std::uniform_real_distribution<double> dist(-bound, bound);

  LoraPair pair;
  pair.alpha = alpha;
  pair.a.resize(r, d);
  for (Index i = 0; i < pair.a.size(); ++i) pair.a.data()[i] = dist(rng);
  pair.b = DenseMatrix::Zero(k, r);
  return pair;
}

DenseMatrix lora_delta(const LoraPair& pair) {
  return pair.scale() * (pair.b * pair.a);
}

DenseMatrix effective_weight(const FrozenLayer& layer, const LoraPair& pair) {
  require_same_shape(layer.w0, layer.residual, "residual");
  DenseMatrix delta = lora_delta(pair);
  require_same_shape(layer.w0, delta, "adapter delta");
  return layer.w0 + layer.residual + delta;
}

LoraGradients lora_gradients(const FrozenLayer& layer, const LoraPair& pair,
                             const DenseMatrix& x, const DenseMatrix& gy) {
  if (x.rows() != gy.rows()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("batch sizes differ: x has {} rows, gy has {}",
                            x.rows(), gy.rows()));
  }
  if (x.cols() != pair.in_dim() || gy.cols() != pair.out_dim() ||
      layer.w0.rows() != pair.out_dim() || layer.w0.cols() != pair.in_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "lora_gradients operand shapes");
  }
  const double s = pair.scale();
  LoraGradients grads;
  // gB = s gy^T (x A^T), gA = s (gy B)^T x.
  grads.b = s * (gy.transpose() * (x * pair.a.transpose()));
  grads.a = s * ((gy * pair.b).transpose() * x);
  return grads;
}

}  // namespace fedlora
