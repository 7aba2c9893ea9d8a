#pragma once

#include "fedlora/aggregation.hpp"
#include "fedlora/na_solver.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedlora {

enum class FactorizationMethod { kSvd, kGramSchmidt };

std::string_view to_string(FactorizationMethod method);

struct FactorizationReport {
  FactorizationMethod method = FactorizationMethod::kSvd;
  DenseMatrix b;  // k x r
  DenseMatrix a;  // r x d
  // ||B A - target||_F / ||target||_F, defined as 0 for a zero target.
  double gap = 0.0;
  double wall_clock_s = 0.0;
};

/// Truncated SVD with the singular values split evenly between the factors:
/// B = U_r S_r^{1/2}, A = S_r^{1/2} V_r^T.
FactorizationReport factorize_svd(const DenseMatrix& target, Index r);

/// Truncated modified Gram-Schmidt with column pivoting: B holds the first r
/// orthonormal directions, A = B^T target.
FactorizationReport factorize_gram_schmidt(const DenseMatrix& target, Index r);

struct ComparisonRow {
  std::string method;
  double wall_clock_s = 0.0;
  double gap = 0.0;
};

// Runs SVD, Gram-Schmidt and the coefficient solver against the ideal
// aggregate of one layer. The SVD and Gram-Schmidt timings exclude forming
// the target; the solver timing covers everything from the client factors.
std::vector<ComparisonRow> compare_execution(
    std::span<const ClientUpdate> updates, const ClientWeights& w,
    const std::string& layer_id, Index r, const SolverConfig& config);

// method,wall_clock_s,normalized_gap
std::string comparison_csv(std::span<const ComparisonRow> rows);

}  // namespace fedlora
