#include "fedlora/na_solver.hpp"

#include "fedlora/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace fedlora {

void SolverConfig::validate() const {
  if (steps < 1) {
    throw Error(ErrorCode::kValidationError, "solver.steps must be >= 1");
  }
  if (!(learning_rate > 0.0)) {
    throw Error(ErrorCode::kValidationError,
                "solver.learning_rate must be positive");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw Error(ErrorCode::kValidationError,
                "solver.beta1 and solver.beta2 must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw Error(ErrorCode::kValidationError, "solver.epsilon must be positive");
  }
  if (init_scale && !(std::isfinite(*init_scale) && *init_scale != 0.0)) {
    throw Error(ErrorCode::kValidationError,
                "solver.init_scale must be finite and nonzero");
  }
  if (!(std::isfinite(gauge) && gauge != 0.0)) {
    throw Error(ErrorCode::kValidationError,
                "solver.gauge must be finite and nonzero");
  }
}

DenseMatrix NaProblem::target() const {
  DenseMatrix t = DenseMatrix::Zero(b.front().rows(), a.front().cols());
  for (std::size_t u = 0; u < clients(); ++u) t += weights[u] * (b[u] * a[u]);
  return t;
}

void NaProblem::validate() const {
  if (a.empty()) throw Error(ErrorCode::kEmptyUpdateList, "no clients");
  if (a.size() != b.size() || a.size() != weights.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "factor and weight counts disagree");
  }
  for (std::size_t u = 0; u < a.size(); ++u) {
    require_same_shape(a[u], a.front(), "client A");
    require_same_shape(b[u], b.front(), "client B");
  }
  if (b.front().cols() != a.front().rows()) {
    throw Error(ErrorCode::kShapeMismatch, "B columns must equal A rows");
  }
}

namespace {

struct Factors {
  DenseMatrix m;  // sum p_u B_u
  DenseMatrix n;  // sum q_u A_u
};

Factors combine(const Vector& p, const Vector& q, const NaProblem& problem) {
  if (static_cast<std::size_t>(p.size()) != problem.clients() ||
      static_cast<std::size_t>(q.size()) != problem.clients()) {
    throw Error(ErrorCode::kShapeMismatch,
                "coefficient vectors must have one entry per client");
  }
  Factors f{DenseMatrix::Zero(problem.b.front().rows(),
                              problem.b.front().cols()),
            DenseMatrix::Zero(problem.a.front().rows(),
                              problem.a.front().cols())};
  for (std::size_t u = 0; u < problem.clients(); ++u) {
    f.m += p[u] * problem.b[u];
    f.n += q[u] * problem.a[u];
  }
  return f;
}

double dense_objective(const Vector& p, const Vector& q,
                       const NaProblem& problem, const DenseMatrix& target) {
  const Factors f = combine(p, q, problem);
  return (f.m * f.n - target).squaredNorm();
}

}  // namespace

double na_objective(const Vector& p, const Vector& q,
                    const NaProblem& problem) {
  return dense_objective(p, q, problem, problem.target());
}

NaGradients na_gradients(const Vector& p, const Vector& q,
                         const NaProblem& problem) {
  const Factors f = combine(p, q, problem);
  const DenseMatrix e = f.m * f.n - problem.target();
  NaGradients g{Vector(p.size()), Vector(q.size())};
  for (std::size_t u = 0; u < problem.clients(); ++u) {
    g.p[u] = 2.0 * e.cwiseProduct(problem.b[u] * f.n).sum();
    g.q[u] = 2.0 * e.cwiseProduct(f.m * problem.a[u]).sum();
  }
  return g;
}

GramObjective::GramObjective(const NaProblem& problem) {
  problem.validate();
  clients_ = static_cast<Index>(problem.clients());
  rank_ = problem.a.front().rows();
  const Index r = rank_;
  const Index ur = clients_ * r;

  DenseMatrix b_cat(problem.b.front().rows(), ur);
  DenseMatrix a_cat(ur, problem.a.front().cols());
  for (Index u = 0; u < clients_; ++u) {
    b_cat.middleCols(u * r, r) = problem.b[u];
    a_cat.middleRows(u * r, r) = problem.a[u];
  }
  gram_b_ = b_cat.transpose() * b_cat;
  gram_a_ = a_cat * a_cat.transpose();

  // tr(X Y) = sum(X .* Y^T)
  auto trace_of_product = [](const auto& x, const auto& y) {
    return x.cwiseProduct(y.transpose()).sum();
  };

  cross_ = DenseMatrix::Zero(clients_, clients_);
  for (Index u = 0; u < clients_; ++u) {
    const double wu = problem.weights[u];
    if (wu == 0.0) continue;
    for (Index v = 0; v < clients_; ++v) {
      for (Index t = 0; t < clients_; ++t) {
        cross_(v, t) +=
            wu * trace_of_product(gram_b_.block(v * r, u * r, r, r),
                                  gram_a_.block(u * r, t * r, r, r));
      }
    }
  }
  target_sq_ = 0.0;
  for (Index u = 0; u < clients_; ++u) {
    for (Index v = 0; v < clients_; ++v) {
      target_sq_ += problem.weights[u] * problem.weights[v] *
                    trace_of_product(gram_b_.block(u * r, v * r, r, r),
                                     gram_a_.block(v * r, u * r, r, r));
    }
  }
}

double GramObjective::evaluate(const Vector& p, const Vector& q, Vector* gp,
                               Vector* gq) const {
  const Index r = rank_;
  const Index ur = clients_ * r;
  // Block u of bm is B_u^T M = sum_v p_v B_u^T B_v; likewise an holds
  // A_u N^T. Summing column blocks keeps the cost at O(U^2 r^2).
  DenseMatrix bm = DenseMatrix::Zero(ur, r);
  DenseMatrix an = DenseMatrix::Zero(ur, r);
  for (Index v = 0; v < clients_; ++v) {
    bm.noalias() += p[v] * gram_b_.middleCols(v * r, r);
    an.noalias() += q[v] * gram_a_.middleCols(v * r, r);
  }
  DenseMatrix mtm = DenseMatrix::Zero(r, r);  // M^T M
  DenseMatrix nnt = DenseMatrix::Zero(r, r);  // N N^T
  for (Index u = 0; u < clients_; ++u) {
    mtm.noalias() += p[u] * bm.middleRows(u * r, r);
    nnt.noalias() += q[u] * an.middleRows(u * r, r);
  }

  const double quad = mtm.cwiseProduct(nnt).sum();
  const Vector kq = cross_ * q;
  const double cross = p.dot(kq);
  const double objective = std::max(0.0, quad - 2.0 * cross + target_sq_);

  if (gp != nullptr) {
    gp->resize(clients_);
    for (Index u = 0; u < clients_; ++u) {
      (*gp)[u] = 2.0 * bm.middleRows(u * r, r).cwiseProduct(nnt).sum() -
                 2.0 * kq[u];
    }
  }
  if (gq != nullptr) {
    const Vector ktp = cross_.transpose() * p;
    gq->resize(clients_);
    for (Index u = 0; u < clients_; ++u) {
      (*gq)[u] = 2.0 * an.middleRows(u * r, r).cwiseProduct(mtm).sum() -
                 2.0 * ktp[u];
    }
  }
  return objective;
}

CoefficientPair solve_coefficients(const NaProblem& problem,
                                   const SolverConfig& config) {
  config.validate();
  problem.validate();
  const Index u_count = static_cast<Index>(problem.clients());
  const GramObjective gram(problem);

  const double init_scale =
      config.init_scale.value_or(1.0 / static_cast<double>(u_count));
  Vector init_p(u_count);
  for (Index u = 0; u < u_count; ++u) {
    init_p[u] = init_scale * static_cast<double>(u_count) * problem.weights[u];
  }
  const Vector init_q = init_p / config.gauge;
  init_p *= config.gauge;
  Vector p = init_p;
  Vector q = init_q;

  // Descent runs on the objective divided by ||T||^2 so that epsilon has the
  // same meaning regardless of the magnitude of the client updates.
  const double norm = gram.target_norm_squared() > 0.0
                          ? gram.target_norm_squared()
                          : 1.0;

  CoefficientPair result;
  result.objective_trace.reserve(config.steps + 1);

  Vector m = Vector::Zero(2 * u_count);
  Vector v = Vector::Zero(2 * u_count);
  Vector gp;
  Vector gq;
  Vector best_p = p;
  Vector best_q = q;
  double best = std::numeric_limits<double>::infinity();
  double beta1_pow = 1.0;
  double beta2_pow = 1.0;

  for (int step = 0; step <= config.steps; ++step) {
    const double objective = gram.evaluate(p, q, &gp, &gq);
    if (!std::isfinite(objective) || !gp.allFinite() || !gq.allFinite()) {
      throw Error(ErrorCode::kSolverDiverged,
                  fmt::format("non-finite objective at step {}", step));
    }
    result.objective_trace.push_back(objective);
    if (objective < best) {
      best = objective;
      best_p = p;
      best_q = q;
    }
    if (step == config.steps) break;

    Vector g(2 * u_count);
    g << gp / norm, gq / norm;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    beta1_pow *= config.beta1;
    beta2_pow *= config.beta2;
    const Vector m_hat = m / (1.0 - beta1_pow);
    const Vector v_hat = v / (1.0 - beta2_pow);
    const Vector update =
        config.learning_rate *
        m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + config.epsilon)
                                .matrix());
    p -= update.head(u_count);
    q -= update.tail(u_count);
  }

  // Report endpoint objectives from the dense definition; the Gram form
  // loses a few digits to cancellation once the objective is tiny.
  const DenseMatrix target = problem.target();
  result.initial_objective = dense_objective(init_p, init_q, problem, target);
  const double dense_best = dense_objective(best_p, best_q, problem, target);
  if (dense_best <= result.initial_objective) {
    result.p = best_p;
    result.q = best_q;
    result.final_objective = dense_best;
  } else {
    result.p = init_p;
    result.q = init_q;
    result.final_objective = result.initial_objective;
  }
  return result;
}

CoefficientPair brute_force_coefficients(const NaProblem& problem,
                                         double range, int grid_steps) {
  problem.validate();
  const std::size_t u_count = problem.clients();
  if (u_count > 3 || grid_steps < 2 ||
      std::pow(static_cast<double>(grid_steps), 2.0 * u_count) > 1e8) {
    throw Error(ErrorCode::kIntractableInstance,
                fmt::format("U={} with {} grid points per axis", u_count,
                            grid_steps));
  }
  if (!(range > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "grid range must be positive");
  }
  std::vector<double> axis(grid_steps);
  for (int i = 0; i < grid_steps; ++i) {
    axis[i] = -range + 2.0 * range * i / (grid_steps - 1);
  }

  const DenseMatrix target = problem.target();
  std::size_t per_vector = 1;
  for (std::size_t u = 0; u < u_count; ++u) per_vector *= grid_steps;

  auto point = [&](std::size_t code) {
    Vector c(u_count);
    for (std::size_t u = 0; u < u_count; ++u) {
      c[u] = axis[code % grid_steps];
      code /= grid_steps;
    }
    return c;
  };

  CoefficientPair best;
  best.final_objective = std::numeric_limits<double>::infinity();
  for (std::size_t pi = 0; pi < per_vector; ++pi) {
    const Vector p = point(pi);
    DenseMatrix m = DenseMatrix::Zero(target.rows(), problem.b.front().cols());
    for (std::size_t u = 0; u < u_count; ++u) m += p[u] * problem.b[u];
    for (std::size_t qi = 0; qi < per_vector; ++qi) {
      const Vector q = point(qi);
      DenseMatrix n =
          DenseMatrix::Zero(problem.a.front().rows(), target.cols());
      for (std::size_t u = 0; u < u_count; ++u) n += q[u] * problem.a[u];
      const double objective = (m * n - target).squaredNorm();
      if (objective < best.final_objective) {
        best.final_objective = objective;
        best.p = p;
        best.q = q;
      }
    }
  }
  best.initial_objective = best.final_objective;
  best.objective_trace = {best.final_objective};
  return best;
}

std::string objective_trace_csv(const CoefficientPair& result) {
  std::string out = "step,objective\n";
  for (std::size_t i = 0; i < result.objective_trace.size(); ++i) {
    out += fmt::format("{},{}\n", i, result.objective_trace[i]);
  }
  return out;
}

}  // namespace fedlora
