#include "fedlora/matrix.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <sstream>

namespace fedlora {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidDimensions: return "invalid-dimensions";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kEmptyUpdateList: return "empty-update-list";
    case ErrorCode::kFrozenViolation: return "frozen-violation";
    case ErrorCode::kSolverDiverged: return "solver-diverged";
    case ErrorCode::kIntractableInstance: return "intractable-instance";
    case ErrorCode::kNoConvergence: return "no-convergence";
    case ErrorCode::kInvalidSpec: return "invalid-spec";
    case ErrorCode::kInsufficientSamples: return "insufficient-samples";
    case ErrorCode::kDivergenceDetected: return "divergence-detected";
    case ErrorCode::kEmptyTestSet: return "empty-test-set";
    case ErrorCode::kParseError: return "parse-error";
    case ErrorCode::kValidationError: return "validation-error";
    case ErrorCode::kMissingArtifacts: return "missing-artifacts";
    case ErrorCode::kIo: return "io-error";
  }
  return "unknown-error";
}

bool is_numeric_failure(ErrorCode code) {
  return code == ErrorCode::kSolverDiverged ||
         code == ErrorCode::kDivergenceDetected ||
         code == ErrorCode::kNoConvergence;
}

double frobenius(const DenseMatrix& m) { return m.norm(); }

double frobenius_squared(const DenseMatrix& m) { return m.squaredNorm(); }

bool all_finite(const DenseMatrix& m) { return m.allFinite(); }

void require_same_shape(const DenseMatrix& lhs, const DenseMatrix& rhs,
                        std::string_view what) {
  if (lhs.rows() != rhs.rows() || lhs.cols() != rhs.cols()) {
    throw Error(ErrorCode::kShapeMismatch,
                fmt::format("{}: {}x{} vs {}x{}", what, lhs.rows(), lhs.cols(),
                            rhs.rows(), rhs.cols()));
  }
}

std::string dump_matrix(const DenseMatrix& m) {
  fmt::memory_buffer out;
  fmt::format_to(std::back_inserter(out), "{} {}\n", m.rows(), m.cols());
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out.push_back(' ');
      // {} is the shortest representation that round-trips exactly.
      fmt::format_to(std::back_inserter(out), "{}", m(i, j));
    }
    out.push_back('\n');
  }
  return fmt::to_string(out);
}

DenseMatrix parse_matrix(std::string_view text) {
  std::istringstream in{std::string(text)};
  long rows = -1;
  long cols = -1;
  if (!(in >> rows >> cols) || rows < 0 || cols < 0) {
    throw Error(ErrorCode::kParseError, "matrix header must be 'rows cols'");
  }
  DenseMatrix m(rows, cols);
  std::string token;
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      if (!(in >> token)) {
        throw Error(ErrorCode::kParseError,
                    fmt::format("matrix truncated at entry ({}, {})", i, j));
      }
      double value = 0.0;
      auto [ptr, ec] =
          std::from_chars(token.data(), token.data() + token.size(), value);
      if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw Error(ErrorCode::kParseError,
                    fmt::format("bad matrix entry '{}'", token));
      }
      m(i, j) = value;
    }
  }
  if (in >> token) {
    throw Error(ErrorCode::kParseError, "trailing data after matrix body");
  }
  return m;
}

}  // namespace fedlora
