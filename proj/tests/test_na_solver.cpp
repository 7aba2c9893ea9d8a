#include "doctest.h"

#include "fedlora/aggregation.hpp"
#include "fedlora/error.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/na_solver.hpp"
#include "support.hpp"

using namespace fedlora;
using namespace fedlora::testing;

namespace {

NaProblem random_problem(std::size_t clients, Index k, Index d, Index r, Rng& rng) {
  NaProblem problem;
  for (std::size_t u = 0; u < clients; ++u) {
    problem.a.push_back(random_matrix(r, d, rng));
    problem.b.push_back(random_matrix(k, r, rng));
  }
  problem.weights.assign(clients, 1.0 / static_cast<double>(clients));
  return problem;
}

NaProblem hand_problem() {
  return make_na_problem(hand_instance(), ClientWeights::uniform(2), "layer00");
}

NaProblem identity_problem() {
  return make_na_problem(identity_instance(), ClientWeights::uniform(2), "layer00");
}

Vector random_vector(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(static_cast<Index>(n));
  for (Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

TEST_SUITE("na_solver") {

TEST_CASE("objective special points") {
  Rng rng(1);
  const NaProblem single = random_problem(1, 3, 4, 2, rng);
  CHECK(na_objective(Vector::Ones(1), Vector::Ones(1), single) <= 1e-24);

  const NaProblem problem = random_problem(3, 4, 5, 2, rng);
  const double t = problem.target().squaredNorm();
  CHECK(na_objective(Vector::Zero(3), Vector::Zero(3), problem) == doctest::Approx(t));

  // The FedIT point p = q = w reproduces the product of averages.
  const Vector w = Vector::Constant(3, 1.0 / 3.0);
  DenseMatrix b_bar = DenseMatrix::Zero(4, 2);
  DenseMatrix a_bar = DenseMatrix::Zero(2, 5);
  for (std::size_t u = 0; u < 3; ++u) {
    b_bar += problem.b[u] / 3.0;
    a_bar += problem.a[u] / 3.0;
  }
  CHECK(na_objective(w, w, problem) ==
        doctest::Approx((b_bar * a_bar - problem.target()).squaredNorm()));
}

TEST_CASE("objective is invariant under the scale gauge") {
  Rng rng(2);
  const NaProblem problem = random_problem(3, 4, 4, 2, rng);
  const Vector p = random_vector(3, rng);
  const Vector q = random_vector(3, rng);
  for (double c : {2.0, -0.5, 7.0}) {
    CHECK(na_objective(c * p, q / c, problem) ==
          doctest::Approx(na_objective(p, q, problem)).epsilon(1e-12));
  }
}

TEST_CASE("dense and Gram-space evaluations agree") {
  Rng rng(3);
  const NaProblem problem = random_problem(4, 6, 5, 3, rng);
  const GramObjective gram(problem);
  CHECK(gram.target_norm_squared() == doctest::Approx(problem.target().squaredNorm()));
  const Vector p = random_vector(4, rng);
  const Vector q = random_vector(4, rng);
  Vector gp;
  Vector gq;
  const double value = gram.evaluate(p, q, &gp, &gq);
  CHECK(value == doctest::Approx(na_objective(p, q, problem)).epsilon(1e-10));
  const NaGradients dense = na_gradients(p, q, problem);
  for (Index u = 0; u < 4; ++u) {
    CHECK(relative_error(gp[u], dense.p[u]) <= 1e-10);
    CHECK(relative_error(gq[u], dense.q[u]) <= 1e-10);
  }
}

TEST_CASE("gradients vanish at exact solutions and at the origin") {
  const NaProblem problem = hand_problem();
  const NaGradients origin = na_gradients(Vector::Zero(2), Vector::Zero(2), problem);
  CHECK(origin.p.isZero(0.0));
  CHECK(origin.q.isZero(0.0));

  // B_u = beta_u b: with P = (1, 0) the left factor is b, and Q = (0.5, 1)
  // gives N = (0.5, 1), so M N = target exactly.
  Vector p(2);
  p << 1.0, 0.0;
  Vector q(2);
  q << 0.5, 1.0;
  CHECK(na_objective(p, q, problem) <= 1e-30);
  const NaGradients at_solution = na_gradients(p, q, problem);
  CHECK(at_solution.p.norm() <= 1e-14);
  CHECK(at_solution.q.norm() <= 1e-14);
}

TEST_CASE("gradients match central finite differences") {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(3, StreamTag::kFixture, {trial}));
    const NaProblem problem = random_problem(3, 4, 4, 2, rng);
    Vector p = random_vector(3, rng);
    Vector q = random_vector(3, rng);
    const NaGradients g = na_gradients(p, q, problem);
    const double h = 1e-5;
    for (Index u = 0; u < 3; ++u) {
      for (Vector* v : {&p, &q}) {
        const double saved = (*v)[u];
        (*v)[u] = saved + h;
        const double up = na_objective(p, q, problem);
        (*v)[u] = saved - h;
        const double down = na_objective(p, q, problem);
        (*v)[u] = saved;
        const double analytic = v == &p ? g.p[u] : g.q[u];
        CHECK(relative_error(analytic, (up - down) / (2 * h)) <= 1e-5);
      }
    }
  }
}

TEST_CASE("solver reaches exact solutions") {
  Rng rng(4);
  const NaProblem single = random_problem(1, 4, 4, 2, rng);
  const CoefficientPair one = solve_coefficients(single, SolverConfig{});
  CHECK(one.final_objective <= 1e-12);
  CHECK(one.objective_trace.size() == 101);

  SolverConfig config;
  config.steps = 2000;
  const CoefficientPair hand = solve_coefficients(hand_problem(), config);
  CHECK(hand.final_objective <= 1e-6);
  CHECK(hand.initial_objective == doctest::Approx(0.25));
}

TEST_CASE("solver stops at the Eckart-Young floor") {
  SolverConfig config;
  config.steps = 2000;
  const CoefficientPair result = solve_coefficients(identity_problem(), config);
  CHECK(result.final_objective == doctest::Approx(0.25).epsilon(1e-3 / 0.25));
  CHECK(std::abs(result.final_objective - 0.25) <= 1e-3);

  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(5, StreamTag::kFixture, {trial}));
    const NaProblem problem = random_problem(4, 6, 6, 2, rng);
    const double floor = tail_energy(problem.target(), 2);
    const CoefficientPair c = solve_coefficients(problem, SolverConfig{});
    CHECK(c.final_objective >= floor - 1e-9);
  }
}

TEST_CASE("final objective never exceeds the initial one") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(6, StreamTag::kFixture, {trial}));
    const NaProblem problem = random_problem(5, 8, 7, 3, rng);
    SolverConfig config;
    config.learning_rate = 0.5;  // deliberately aggressive
    const CoefficientPair c = solve_coefficients(problem, config);
    CHECK(c.final_objective <= c.initial_objective);
    CHECK(c.initial_objective == doctest::Approx(c.objective_trace.front()));
    CHECK(c.p.allFinite());
  }
}

TEST_CASE("solver is deterministic and gauge-consistent") {
  Rng rng(7);
  const NaProblem problem = random_problem(3, 5, 5, 2, rng);
  SolverConfig config;
  config.steps = 3000;
  const CoefficientPair x = solve_coefficients(problem, config);
  const CoefficientPair y = solve_coefficients(problem, config);
  CHECK(x.p == y.p);
  CHECK(x.objective_trace == y.objective_trace);

  // Starting from (2 p0, q0 / 2) leaves the initial aggregate unchanged;
  // the converged aggregate must not depend on the gauge either.
  auto aggregate_of = [&](const CoefficientPair& c) {
    DenseMatrix m = DenseMatrix::Zero(5, 2);
    DenseMatrix n = DenseMatrix::Zero(2, 5);
    for (std::size_t u = 0; u < 3; ++u) {
      m += c.p[static_cast<Index>(u)] * problem.b[u];
      n += c.q[static_cast<Index>(u)] * problem.a[u];
    }
    return DenseMatrix(m * n);
  };
  SolverConfig scaled = config;
  scaled.gauge = 2.0;
  const CoefficientPair z = solve_coefficients(problem, scaled);
  CHECK(z.initial_objective == doctest::Approx(x.initial_objective).epsilon(1e-12));
  CHECK((aggregate_of(x) - aggregate_of(z)).norm() <= 1e-6);
}

TEST_CASE("brute-force oracle") {
  Rng rng(8);
  const NaProblem single = random_problem(1, 3, 3, 1, rng);
  const CoefficientPair grid = brute_force_coefficients(single, 2.0, 401);
  CHECK(grid.final_objective <= 1e-2 * std::max(1.0, single.target().squaredNorm()));

  const NaProblem hand = hand_problem();
  const CoefficientPair oracle = brute_force_coefficients(hand, 2.0, 41);
  SolverConfig config;
  config.steps = 2000;
  CHECK(solve_coefficients(hand, config).final_objective <= oracle.final_objective + 1e-6);

  // Swapping two symmetric clients leaves the oracle minimum unchanged.
  NaProblem swapped = identity_problem();
  std::swap(swapped.a[0], swapped.a[1]);
  std::swap(swapped.b[0], swapped.b[1]);
  CHECK(brute_force_coefficients(swapped, 1.0, 21).final_objective ==
        doctest::Approx(brute_force_coefficients(identity_problem(), 1.0, 21).final_objective));

  const NaProblem four = random_problem(4, 2, 2, 1, rng);
  CHECK_THROWS_AS(brute_force_coefficients(four, 1.0, 3), Error);
  const NaProblem three = random_problem(3, 2, 2, 1, rng);
  CHECK_THROWS_AS(brute_force_coefficients(three, 1.0, 30), Error);
}

TEST_CASE("solver config validation and trace export") {
  SolverConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = SolverConfig{};
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), Error);

  const CoefficientPair c = solve_coefficients(hand_problem(), SolverConfig{});
  const std::string csv = objective_trace_csv(c);
  CHECK(csv.rfind("step,objective\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 102);
}

TEST_CASE("divergence dominance on random instances") {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(derive_seed(9, StreamTag::kFixture, {trial}));
    auto updates = random_updates(4, 8, 8, 2, rng);
    const auto w = ClientWeights::uniform(4);
    const auto fedit = divergence(aggregate_fedit(updates, w));
    const auto na = divergence(aggregate_flora_na(updates, w, SolverConfig{}));
    CHECK(na.rho <= fedit.rho * (1 + 1e-12));
  }
}

}  // TEST_SUITE
