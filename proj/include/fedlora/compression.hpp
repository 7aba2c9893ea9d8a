#pragma once

#include "fedlora/matrix.hpp"

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace fedlora {

enum class CompressionMode { kNone, kHalfPrecision, kQuantUniform, kSparsifyTopK };

std::string_view to_string(CompressionMode mode);
CompressionMode compression_mode_from_string(std::string_view name);

struct CompressionSpec {
  CompressionMode mode = CompressionMode::kNone;
  int bits = 8;                // QUANT_UNIFORM: 8 or 16
  double keep_fraction = 1.0;  // SPARSIFY_TOPK: in (0, 1]

  void validate() const;
};

// IEEE 754 binary16 conversion, round to nearest even. Magnitudes beyond
// the half range saturate at +-65504 so decoded matrices stay finite.
std::uint16_t to_half_bits(float value);
float from_half_bits(std::uint16_t bits);

/// A compressed matrix. Only the payload matching `mode` is populated.
struct EncodedMatrix {
  CompressionMode mode = CompressionMode::kNone;
  Index rows = 0;
  Index cols = 0;
  std::vector<double> raw;               // NONE
  std::vector<std::uint16_t> half;       // HALF_PRECISION
  std::vector<std::uint16_t> codes;      // QUANT_UNIFORM, one per entry
  int bits = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::pair<std::uint32_t, double>> sparse;  // SPARSIFY_TOPK
  std::uint64_t bytes = 0;

  DenseMatrix decode() const;
};

/// Encoded sizes: NONE 8 B/entry; HALF 2 B/entry; QUANT bits/8 B/entry plus
/// 16 B for the range; SPARSIFY 12 B per kept entry (u32 index, f64 value).
EncodedMatrix compress(const DenseMatrix& matrix, const CompressionSpec& spec);

}  // namespace fedlora
