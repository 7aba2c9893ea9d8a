#pragma once

#include "fedlora/matrix.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fedlora {

/// One low-rank adapter. The update it represents is (alpha / rank) * B * A
/// with A of shape rank x in_dim and B of shape out_dim x rank.
struct LoraPair {
  DenseMatrix a;
  DenseMatrix b;
  double alpha = 1.0;

  Index rank() const { return a.rows(); }
  Index in_dim() const { return a.cols(); }
  Index out_dim() const { return b.rows(); }
  double scale() const { return alpha / static_cast<double>(rank()); }

  // Throws kInvalidDimensions / kShapeMismatch when the shape invariants
  // do not hold.
  void validate() const;
};

// Frozen pretrained weight plus the server-owned residual slot. Training
// never touches w0.
struct FrozenLayer {
  DenseMatrix w0;
  DenseMatrix residual;

  static FrozenLayer from_weight(DenseMatrix w0);
  DenseMatrix base() const { return w0 + residual; }
};

struct AdapterLayer {
  std::string id;
  FrozenLayer frozen;
  LoraPair lora;
};

using AdapterSet = std::vector<AdapterLayer>;

// Throws kInvalidSpec on duplicate ids.
void validate_adapter_set(const AdapterSet& set);

/// Kaiming-uniform A with fan-in = d (bound sqrt(6/d)), zero B.
LoraPair init_lora(Index k, Index d, Index r, double alpha,
                   std::uint64_t seed);

DenseMatrix lora_delta(const LoraPair& pair);

DenseMatrix effective_weight(const FrozenLayer& layer, const LoraPair& pair);

struct LoraGradients {
  DenseMatrix a;
  DenseMatrix b;
};

/// Gradients of a loss through y = W_eff x for a batch x (n x d) with
/// upstream gradients gy (n x k), summed over the batch. With G = gy^T x:
/// gB = s G A^T and gA = s B^T G, evaluated without forming G.
LoraGradients lora_gradients(const FrozenLayer& layer, const LoraPair& pair,
                             const DenseMatrix& x, const DenseMatrix& gy);

}  // namespace fedlora
