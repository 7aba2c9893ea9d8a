#pragma once

#include "fedlora/matrix.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fedlora {

struct SolverConfig {
  int steps = 100;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Starting coefficients are p = q = init_scale * U * w. Unset means 1/U,
  // i.e. p = q = w, whose product is exactly the FedIT aggregate.
  std::optional<double> init_scale;
  // Starts from (gauge * p, q / gauge) instead: the same product, a
  // different point on its gauge orbit.
  double gauge = 1.0;

  void validate() const;
};

/// Per-layer instance of the coefficient problem. Factors are the raw
/// client matrices with the alpha/r scale already divided out.
struct NaProblem {
  std::vector<DenseMatrix> a;  // r x d per client
  std::vector<DenseMatrix> b;  // k x r per client
  std::vector<double> weights;

  std::size_t clients() const { return a.size(); }
  DenseMatrix target() const;  // sum_u w_u B_u A_u
  void validate() const;
};

struct CoefficientPair {
  Vector p;
  Vector q;
  // trace[0] is the objective at initialization, trace[i] after i updates.
  std::vector<double> objective_trace;
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

// ||(sum p_u B_u)(sum q_u A_u) - T||_F^2, evaluated densely.
double na_objective(const Vector& p, const Vector& q, const NaProblem& problem);

struct NaGradients {
  Vector p;
  Vector q;
};

// Dense analytic gradients: gp_u = 2<E, B_u N>, gq_u = 2<E, M A_u>.
NaGradients na_gradients(const Vector& p, const Vector& q,
                         const NaProblem& problem);

/// Objective and gradients evaluated in the r x r Gram space of the client
/// factors. After a one-off precompute, each evaluation costs O(U^2 r^2)
/// independent of k and d.
class GramObjective {
 public:
  explicit GramObjective(const NaProblem& problem);

  double target_norm_squared() const { return target_sq_; }

  // Returns the objective; fills gradients when the pointers are non-null.
  double evaluate(const Vector& p, const Vector& q, Vector* gp = nullptr,
                  Vector* gq = nullptr) const;

 private:
  Index clients_;
  Index rank_;
  DenseMatrix gram_b_;  // (U r) x (U r), block (u, v) = B_u^T B_v
  DenseMatrix gram_a_;  // (U r) x (U r), block (u, v) = A_u A_v^T
  DenseMatrix cross_;   // U x U, cross_(v, t) = sum_u w_u tr(B_v^T B_u A_u A_t^T)
  double target_sq_ = 0.0;
};

// Adam descent from p = q = init_scale * U * w. Returns the best iterate,
// so final_objective <= initial_objective always holds.
CoefficientPair solve_coefficients(const NaProblem& problem,
                                   const SolverConfig& config);

// Exhaustive search over [-range, range]^(2U) with grid_steps points per
// axis. Refuses instances with U > 3 or grid_steps^(2U) > 1e8.
CoefficientPair brute_force_coefficients(const NaProblem& problem,
                                         double range, int grid_steps);

std::string objective_trace_csv(const CoefficientPair& result);

}  // namespace fedlora
