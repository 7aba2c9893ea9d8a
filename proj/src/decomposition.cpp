#include "fedlora/decomposition.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>

namespace fedlora {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void check_rank(const DenseMatrix& target, Index r) {
  if (r < 1 || r > std::min(target.rows(), target.cols())) {
    throw Error(ErrorCode::kInvalidDimensions,
                fmt::format("rank {} for a {}x{} target", r, target.rows(),
                            target.cols()));
  }
  if (!target.allFinite()) {
    throw Error(ErrorCode::kInvalidSpec, "target has non-finite entries");
  }
}

double normalized_gap(const DenseMatrix& approx, const DenseMatrix& target) {
  const double norm = target.norm();
  if (norm == 0.0) return 0.0;
  return (approx - target).norm() / norm;
}

}  // namespace

std::string_view to_string(FactorizationMethod method) {
  return method == FactorizationMethod::kSvd ? "SVD" : "GRAM_SCHMIDT";
}

FactorizationReport factorize_svd(const DenseMatrix& target, Index r) {
  check_rank(target, r);
  const auto start = Clock::now();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(target,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success || !svd.singularValues().allFinite()) {
    throw Error(ErrorCode::kNoConvergence, "SVD did not converge");
  }
  const Vector root = svd.singularValues().head(r).cwiseSqrt();
  FactorizationReport report;
  report.method = FactorizationMethod::kSvd;
  report.b = svd.matrixU().leftCols(r) * root.asDiagonal();
  report.a = root.asDiagonal() * svd.matrixV().leftCols(r).transpose();
  report.wall_clock_s = seconds_since(start);
  report.gap = normalized_gap(report.b * report.a, target);
  return report;
}

FactorizationReport factorize_gram_schmidt(const DenseMatrix& target,
                                           Index r) {
  check_rank(target, r);
  const auto start = Clock::now();
  // Column-major working copy: the inner loops walk columns.
  Eigen::MatrixXd work = target;
  const Index k = work.rows();
  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(k, r);
  Vector col_norms = work.colwise().squaredNorm().transpose();
  const double tiny = 1e-28 * std::max(1.0, target.squaredNorm());

  for (Index j = 0; j < r; ++j) {
    Index pivot = 0;
    const double best = col_norms.maxCoeff(&pivot);
    if (best <= tiny) break;  // remaining columns already spanned
    Vector q = work.col(pivot) / std::sqrt(best);
    // Re-orthogonalize once against the accepted basis.
    q -= basis.leftCols(j) * (basis.leftCols(j).transpose() * q);
    q.normalize();
    basis.col(j) = q;
    const Eigen::RowVectorXd proj = q.transpose() * work;
    work.noalias() -= q * proj;
    col_norms = work.colwise().squaredNorm().transpose();
  }

  FactorizationReport report;
  report.method = FactorizationMethod::kGramSchmidt;
  report.b = basis;
  report.a = basis.transpose() * target;
  report.wall_clock_s = seconds_since(start);
  report.gap = normalized_gap(report.b * report.a, target);
  return report;
}

std::vector<ComparisonRow> compare_execution(
    std::span<const ClientUpdate> updates, const ClientWeights& w,
    const std::string& layer_id, Index r, const SolverConfig& config) {
  const AggregateResult ideal = aggregate_ideal(updates, w);
  auto it = ideal.layers.find(layer_id);
  if (it == ideal.layers.end()) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("unknown layer '{}'", layer_id));
  }
  const DenseMatrix& target = it->second.ideal_delta;

  std::vector<ComparisonRow> rows;
  const FactorizationReport svd = factorize_svd(target, r);
  rows.push_back({"SVD", svd.wall_clock_s, svd.gap});
  const FactorizationReport gs = factorize_gram_schmidt(target, r);
  rows.push_back({"GRAM_SCHMIDT", gs.wall_clock_s, gs.gap});

  const auto start = Clock::now();
  const NaProblem problem = make_na_problem(updates, w, layer_id);
  const CoefficientPair coeffs = solve_coefficients(problem, config);
  DenseMatrix a_bar = DenseMatrix::Zero(problem.a.front().rows(),
                                        problem.a.front().cols());
  DenseMatrix b_bar = DenseMatrix::Zero(problem.b.front().rows(),
                                        problem.b.front().cols());
  for (std::size_t u = 0; u < problem.clients(); ++u) {
    a_bar += coeffs.q[u] * problem.a[u];
    b_bar += coeffs.p[u] * problem.b[u];
  }
  const double elapsed = seconds_since(start);
  const double scale = updates.front().adapters.at(layer_id).scale();
  rows.push_back({fmt::format("FLORA_NA_{}_STEPS", config.steps), elapsed,
                  normalized_gap(scale * (b_bar * a_bar), target)});
  return rows;
}

std::string comparison_csv(std::span<const ComparisonRow> rows) {
  std::string out = "method,wall_clock_s,normalized_gap\n";
  for (const auto& row : rows) {
    out += fmt::format("{},{:.6e},{:.6e}\n", row.method, row.wall_clock_s,
                       row.gap);
  }
  return out;
}

}  // namespace fedlora
