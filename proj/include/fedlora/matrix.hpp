#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace fedlora {

using Index = Eigen::Index;

// Row-major dense storage for every matrix in the library.
using DenseMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

double frobenius(const DenseMatrix& m);
double frobenius_squared(const DenseMatrix& m);

bool all_finite(const DenseMatrix& m);

// Throws kShapeMismatch naming `what` when shapes differ.
void require_same_shape(const DenseMatrix& lhs, const DenseMatrix& rhs,
                        std::string_view what);

// Text fixture format: "rows cols" header, then one row per line with
// space-separated decimals printed at round-trip precision.
std::string dump_matrix(const DenseMatrix& m);
DenseMatrix parse_matrix(std::string_view text);

}  // namespace fedlora
