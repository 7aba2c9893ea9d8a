#include "fedlora/compression.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <numeric>
#include <string>

namespace fedlora {

std::string_view to_string(CompressionMode mode) {
  switch (mode) {
    case CompressionMode::kNone: return "NONE";
    case CompressionMode::kHalfPrecision: return "HALF_PRECISION";
    case CompressionMode::kQuantUniform: return "QUANT_UNIFORM";
    case CompressionMode::kSparsifyTopK: return "SPARSIFY_TOPK";
  }
  return "UNKNOWN";
}

CompressionMode compression_mode_from_string(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](char c) {
    return c == '-' ? '_' : static_cast<char>(std::toupper(c));
  });
  for (auto mode : {CompressionMode::kNone, CompressionMode::kHalfPrecision,
                    CompressionMode::kQuantUniform,
                    CompressionMode::kSparsifyTopK}) {
    if (to_string(mode) == upper) return mode;
  }
  throw Error(ErrorCode::kValidationError,
              fmt::format("unknown compression mode '{}'", name));
}

void CompressionSpec::validate() const {
  if (mode == CompressionMode::kQuantUniform && bits != 8 && bits != 16) {
    throw Error(ErrorCode::kValidationError,
                fmt::format("compression.bits must be 8 or 16, got {}", bits));
  }
  if (mode == CompressionMode::kSparsifyTopK &&
      !(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw Error(ErrorCode::kValidationError,
                "compression.keep_fraction must lie in (0, 1]");
  }
}

std::uint16_t to_half_bits(float value) {
  const auto x = std::bit_cast<std::uint32_t>(value);
  const auto sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t magnitude = x & 0x7fffffffu;
  if (magnitude > 0x7f800000u) return sign | 0x7e00u;  // NaN
  constexpr std::uint16_t kMaxFinite = 0x7bffu;        // 65504
  if (magnitude >= 0x477ff000u) return sign | kMaxFinite;

  const int exponent = static_cast<int>(magnitude >> 23) - 127 + 15;
  std::uint32_t mantissa = magnitude & 0x7fffffu;
  if (exponent <= 0) {
    if (exponent < -10) return sign;
    mantissa |= 0x800000u;
    const int shift = 14 - exponent;
    std::uint32_t half = mantissa >> shift;
    const std::uint32_t rest = mantissa & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rest > halfway || (rest == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half =
      (static_cast<std::uint32_t>(exponent) << 10) | (mantissa >> 13);
  const std::uint32_t rest = mantissa & 0x1fffu;
  if (rest > 0x1000u || (rest == 0x1000u && (half & 1u))) ++half;
  if (half > kMaxFinite) half = kMaxFinite;
  return static_cast<std::uint16_t>(sign | half);
}

float from_half_bits(std::uint16_t bits) {
  const std::uint32_t sign = static_cast<std::uint32_t>(bits & 0x8000u) << 16;
  const std::uint32_t exponent = (bits >> 10) & 0x1fu;
  std::uint32_t mantissa = bits & 0x3ffu;
  std::uint32_t out = 0;
  if (exponent == 0) {
    if (mantissa == 0) {
      out = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mantissa <<= 1;
      } while ((mantissa & 0x400u) == 0);
      out = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) |
            ((mantissa & 0x3ffu) << 13);
    }
  } else if (exponent == 0x1fu) {
    out = sign | 0x7f800000u | (mantissa << 13);
  } else {
    out = sign | ((exponent - 15 + 127) << 23) | (mantissa << 13);
  }
  return std::bit_cast<float>(out);
}

EncodedMatrix compress(const DenseMatrix& matrix, const CompressionSpec& spec) {
  spec.validate();
  EncodedMatrix enc;
  enc.mode = spec.mode;
  enc.rows = matrix.rows();
  enc.cols = matrix.cols();
  const auto n = static_cast<std::size_t>(matrix.size());
  const double* data = matrix.data();

  switch (spec.mode) {
    case CompressionMode::kNone:
      enc.raw.assign(data, data + n);
      enc.bytes = 8 * n;
      break;
    case CompressionMode::kHalfPrecision:
      enc.half.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        enc.half[i] = to_half_bits(static_cast<float>(data[i]));
      }
      enc.bytes = 2 * n;
      break;
    case CompressionMode::kQuantUniform: {
      enc.bits = spec.bits;
      enc.codes.assign(n, 0);
      if (n > 0) {
        enc.lo = matrix.minCoeff();
        enc.hi = matrix.maxCoeff();
      }
      // A constant matrix (lo == hi) keeps all codes at zero.
      if (enc.hi > enc.lo) {
        const double levels = std::ldexp(1.0, spec.bits) - 1.0;
        const double step = (enc.hi - enc.lo) / levels;
        for (std::size_t i = 0; i < n; ++i) {
          const double code = std::round((data[i] - enc.lo) / step);
          enc.codes[i] =
              static_cast<std::uint16_t>(std::clamp(code, 0.0, levels));
        }
      }
      enc.bytes = static_cast<std::uint64_t>(spec.bits / 8) * n + 16;
      break;
    }
    case CompressionMode::kSparsifyTopK: {
      const auto keep = static_cast<std::size_t>(
          std::ceil(spec.keep_fraction * static_cast<double>(n) - 1e-9));
      std::vector<std::uint32_t> order(n);
      std::iota(order.begin(), order.end(), 0u);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::uint32_t lhs, std::uint32_t rhs) {
                         return std::abs(data[lhs]) > std::abs(data[rhs]);
                       });
      order.resize(std::min(keep, n));
      std::sort(order.begin(), order.end());
      for (std::uint32_t idx : order) {
        if (data[idx] != 0.0) enc.sparse.emplace_back(idx, data[idx]);
      }
      enc.bytes = 12 * enc.sparse.size();
      break;
    }
  }
  return enc;
}

DenseMatrix EncodedMatrix::decode() const {
  DenseMatrix out = DenseMatrix::Zero(rows, cols);
  double* data = out.data();
  const auto n = static_cast<std::size_t>(out.size());
  switch (mode) {
    case CompressionMode::kNone:
      std::copy(raw.begin(), raw.end(), data);
      break;
    case CompressionMode::kHalfPrecision:
      for (std::size_t i = 0; i < n; ++i) data[i] = from_half_bits(half[i]);
      break;
    case CompressionMode::kQuantUniform: {
      const double levels = std::ldexp(1.0, bits) - 1.0;
      const double step = hi > lo ? (hi - lo) / levels : 0.0;
      for (std::size_t i = 0; i < n; ++i) data[i] = lo + codes[i] * step;
      break;
    }
    case CompressionMode::kSparsifyTopK:
      for (const auto& [idx, value] : sparse) data[idx] = value;
      break;
  }
  return out;
}

}  // namespace fedlora
