// Acceptance suite: one PASS/FAIL line per criterion, each at its stated
// tolerance and runtime budget. Exits non-zero if any criterion fails.

#include "fedlora/aggregation.hpp"
#include "fedlora/comm.hpp"
#include "fedlora/compression.hpp"
#include "fedlora/config.hpp"
#include "fedlora/decomposition.hpp"
#include "fedlora/experiment.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/na_solver.hpp"
#include "fedlora/simulator.hpp"
#include "support.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

using namespace fedlora;
using namespace fedlora::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = FEDLORA_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;  // runtime budget; <= 0 means "checked inside"
  std::function<Outcome()> run;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fedlora_acceptance_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<ClientUpdate> mixed_rank_instance(Rng& rng) {
  std::uniform_int_distribution<std::size_t> clients(1, 8);
  std::uniform_int_distribution<Index> dim(1, 32);
  const std::size_t u = clients(rng);
  const Index k = dim(rng);
  const Index d = dim(rng);
  std::uniform_int_distribution<Index> rank(1, std::min(k, d));
  std::vector<Index> ranks;
  for (std::size_t i = 0; i < u; ++i) ranks.push_back(rank(rng));
  return random_updates(u, k, d, 0, rng, ranks, 16.0);
}

Outcome stacking_exactness() {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(101, StreamTag::kFixture, {trial}));
    const auto updates = mixed_rank_instance(rng);
    const auto w = ClientWeights::by_samples(updates);
    const AggregateResult agg = aggregate_stack(updates, w);
    for (const auto& [id, layer] : agg.layers) {
      // Oracle: the weighted sum of every client's own scaled product.
      DenseMatrix ideal = DenseMatrix::Zero(layer.ideal_delta.rows(), layer.ideal_delta.cols());
      for (std::size_t u = 0; u < updates.size(); ++u) {
        const LoraPair& p = updates[u].adapters.at(id);
        ideal += w.values[u] * (p.alpha / static_cast<double>(p.a.rows())) * p.b * p.a;
      }
      worst = std::max(worst, (layer.scale * (*layer.b_bar) * (*layer.a_bar) - ideal).norm());
    }
  }
  return {worst <= 1e-12, fmt::format("max gap {:.3e} (tol 1e-12, 100 instances)", worst)};
}

Outcome fedex_exactness() {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(102, StreamTag::kFixture, {trial}));
    std::uniform_int_distribution<Index> dim(2, 32);
    std::uniform_int_distribution<std::size_t> clients(1, 8);
    const Index k = dim(rng);
    const Index d = dim(rng);
    const Index r = std::uniform_int_distribution<Index>(1, std::min(k, d))(rng);
    const auto updates = random_updates(clients(rng), k, d, r, rng, {}, 16.0);
    const auto w = ClientWeights::by_samples(updates);
    const DenseMatrix w0 = random_matrix(k, d, rng);
    const DenseMatrix fedex = w0 + *aggregate_fedex(updates, w).layers.at("layer00").approx_delta();
    const DenseMatrix ideal = w0 + aggregate_ideal(updates, w).layers.at("layer00").ideal_delta;
    worst = std::max(worst, (fedex - ideal).norm());
  }
  return {worst <= 1e-12, fmt::format("max gap {:.3e} (tol 1e-12, 100 instances)", worst)};
}

NaProblem random_problem(std::size_t clients, Index k, Index d, Index r, Rng& rng) {
  NaProblem problem;
  for (std::size_t u = 0; u < clients; ++u) {
    problem.a.push_back(random_matrix(r, d, rng));
    problem.b.push_back(random_matrix(k, r, rng));
  }
  problem.weights.assign(clients, 1.0 / static_cast<double>(clients));
  return problem;
}

Outcome gradient_check() {
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(103, StreamTag::kFixture, {trial}));
    const NaProblem problem = random_problem(3, 4, 4, 2, rng);
    Vector p = random_matrix(3, 1, rng);
    Vector q = random_matrix(3, 1, rng);
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
        worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
      }
    }
  }
  return {worst <= 1e-5, fmt::format("max relative error {:.3e} (tol 1e-5, 20 instances)", worst)};
}

Outcome oracle_equivalence() {
  const auto updates = hand_instance();
  const auto w = ClientWeights::uniform(2);
  const NaProblem problem = make_na_problem(updates, w, "layer00");
  SolverConfig config;
  config.steps = 2000;
  const double solved = solve_coefficients(problem, config).final_objective;
  const double oracle = brute_force_coefficients(problem, 2.0, 41).final_objective;
  const double fedit = *divergence(aggregate_fedit(updates, w)).aggregate;
  const bool pass = solved <= 1e-6 && solved <= oracle + 1e-6 &&
                    std::abs(fedit - 0.3162) <= 1e-3;
  return {pass, fmt::format("solver {:.3e} (tol 1e-6), grid oracle {:.3e}, FedIT divergence "
                            "{:.4f} (0.3162 +- 1e-3)",
                            solved, oracle, fedit)};
}

Outcome eckart_young() {
  SolverConfig config;
  config.steps = 2000;
  const NaProblem identity =
      make_na_problem(identity_instance(), ClientWeights::uniform(2), "layer00");
  const double value = solve_coefficients(identity, config).final_objective;
  double worst_margin = std::numeric_limits<double>::infinity();
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(derive_seed(105, StreamTag::kFixture, {trial}));
    const NaProblem problem = random_problem(4, 6, 6, 2, rng);
    const double floor = tail_energy(problem.target(), 2);
    const double objective = solve_coefficients(problem, SolverConfig{}).final_objective;
    worst_margin = std::min(worst_margin, objective - floor);
  }
  const bool pass = std::abs(value - 0.25) <= 1e-3 && worst_margin >= -1e-9;
  return {pass, fmt::format("identity objective {:.6f} (0.25 +- 1e-3), min objective - floor "
                            "{:.3e} (>= -1e-9, 20 instances)",
                            value, worst_margin)};
}

SimulationConfig divergence_fixture(std::size_t clients, std::uint64_t seed) {
  SimulationConfig sim = parse_config(kConfigDir / "divergence_128.yaml").base;
  sim.clients = clients;
  sim.seed = seed;
  sim.strategy = Strategy::kFloraNa;
  return sim;
}

Outcome divergence_dominance() {
  double worst_na = 0.0;
  double worst_ratio = 0.0;
  for (std::size_t clients : {10, 50}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      Simulation sim(divergence_fixture(clients, seed));
      for (int round = 0; round < 20; ++round) {
        const RoundLog log = sim.run_round();
        const double na = *log.divergence.aggregate;
        worst_na = std::max(worst_na, na);
        worst_ratio = std::max(worst_ratio, na / *log.fedit_divergence);
      }
    }
  }
  const bool pass = worst_na <= 0.01 && worst_ratio <= 0.2;
  return {pass, fmt::format("max NA divergence {:.4f} (tol 0.01), max NA/FedIT {:.3f} (tol 0.2); "
                            "U in {{10,50}}, 20 rounds, 3 seeds",
                            worst_na, worst_ratio)};
}

Outcome comm_ratios() {
  const std::vector<LayerShape> shapes{{128, 128, 8}};
  const auto fedit = comm_account(Strategy::kFedIt, shapes, 10, 32);
  const auto stack = comm_account(Strategy::kStack, shapes, 10, 32);
  const auto ffa = comm_account(Strategy::kFfa, shapes, 10, 32);
  const auto fedsa = comm_account(Strategy::kFedSa, shapes, 10, 32);
  const auto fedex = comm_account(Strategy::kFedEx, shapes, 10, 32);
  const bool pass = stack.down_entries == 10 * fedit.down_entries &&
                    2 * ffa.up_entries == fedit.up_entries &&
                    2 * ffa.down_entries == fedit.down_entries &&
                    2 * fedsa.up_entries == fedit.up_entries &&
                    2 * fedsa.down_entries == fedit.down_entries &&
                    fedex.down_entries == fedit.down_entries + 128 * 128;
  return {pass, fmt::format("S->C entries: FedIT {}, STACK {}, FFA {}, FedSA {}, FedEx {}; "
                            "C->S: FedIT {}, FFA {}, FedSA {}",
                            fedit.down_entries, stack.down_entries, ffa.down_entries,
                            fedsa.down_entries, fedex.down_entries, fedit.up_entries,
                            ffa.up_entries, fedsa.up_entries)};
}

struct FinalMetrics {
  std::map<Strategy, std::vector<double>> gen_gap;
  std::map<Strategy, std::vector<double>> global;
};

FinalMetrics finals(const std::vector<CellResult>& cells) {
  FinalMetrics out;
  for (const auto& cell : cells) {
    out.gen_gap[cell.plan.sim.strategy].push_back(cell.logs.back().gen_gap);
    out.global[cell.plan.sim.strategy].push_back(cell.logs.back().global_metric);
  }
  return out;
}

const fs::path kGenGapRun = scratch("gengap_a");

Outcome generalization_gap() {
  ExperimentConfig config = parse_config(kConfigDir / "heterogeneous_classification.yaml");
  config.output_dir = kGenGapRun;
  const FinalMetrics m = finals(run_experiment(config));
  const double gap_fedsa = median(m.gen_gap.at(Strategy::kFedSa));
  const double gap_na = median(m.gen_gap.at(Strategy::kFloraNa));
  const double global_na = median(m.global.at(Strategy::kFloraNa));
  const double global_fedit = median(m.global.at(Strategy::kFedIt));
  const bool pass = gap_fedsa > gap_na && gap_na >= 0.0 && global_na >= global_fedit;
  return {pass, fmt::format("median gen-gap FedSA {:.4f} > NA {:.4f} >= 0; median global NA "
                            "{:.4f} >= FedIT {:.4f}",
                            gap_fedsa, gap_na, global_na, global_fedit)};
}

Outcome heterogeneity_sweep() {
  ExperimentConfig config = parse_config(kConfigDir / "alpha_sweep.yaml");
  config.output_dir = scratch("sweep");
  const auto cells = run_sweep(config);
  std::map<Strategy, std::map<double, std::vector<double>>> by;
  for (const auto& cell : cells) {
    by[cell.plan.sim.strategy][cell.plan.sim.dirichlet_alpha].push_back(
        cell.logs.back().global_metric);
  }
  bool pass = true;
  std::string detail;
  for (const auto& [strategy, per_alpha] : by) {
    std::vector<double> medians;
    for (const auto& [alpha, values] : per_alpha) medians.push_back(median(values));
    const bool ok = std::is_sorted(medians.begin(), medians.end());
    pass = pass && ok;
    detail += fmt::format("{}{} {:.4f}/{:.4f}/{:.4f}{}", detail.empty() ? "" : "; ",
                          to_string(strategy), medians[0], medians[1], medians[2],
                          ok ? "" : " (decreasing)");
  }
  fs::remove_all(config.output_dir);
  return {pass, "median final global metric at alpha 0.1/1/10: " + detail};
}

Outcome decomposition_comparison() {
  const Simulation sim(divergence_fixture(10, 1));
  std::vector<ClientUpdate> updates;
  for (auto& result : sim.train_clients()) updates.push_back(std::move(result.update));
  const auto rows = compare_execution(updates, ClientWeights::uniform(updates.size()),
                                      "layer00", 8, SolverConfig{});
  const ComparisonRow& svd = rows[0];
  const ComparisonRow& gs = rows[1];
  const ComparisonRow& na = rows[2];
  const bool pass = na.wall_clock_s < svd.wall_clock_s && na.gap <= 3.0 * svd.gap &&
                    svd.gap <= gs.gap + 1e-12;
  return {pass, fmt::format("wall-clock NA {:.2e}s < SVD {:.2e}s; gap NA {:.4f} <= 3x SVD {:.4f}; "
                            "SVD <= GS {:.4f}",
                            na.wall_clock_s, svd.wall_clock_s, na.gap, svd.gap, gs.gap)};
}

Outcome compression_bounds() {
  bool quant_ok = true;
  double worst = 0.0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(111, StreamTag::kFixture, {trial}));
    const DenseMatrix m = random_matrix(16, 12, rng, 2.0);
    const double bound = (m.maxCoeff() - m.minCoeff()) / 510.0;
    const double err = (compress(m, {CompressionMode::kQuantUniform, 8, 1.0}).decode() - m)
                           .cwiseAbs()
                           .maxCoeff();
    quant_ok = quant_ok && err <= bound;
    worst = std::max(worst, err / bound);
  }
  const std::vector<LayerShape> shapes{{64, 48, 4}};
  const auto b16 = comm_account(Strategy::kFedIt, shapes, 10, 16);
  const auto b32 = comm_account(Strategy::kFedIt, shapes, 10, 32);
  const bool half = 2 * b16.up_bytes == b32.up_bytes && 2 * b16.down_bytes == b32.down_bytes;

  DenseMatrix half_zero = DenseMatrix::Zero(8, 8);
  Rng rng(112);
  const DenseMatrix values = random_matrix(8, 8, rng);
  for (Index i = 0; i < half_zero.size(); i += 2) half_zero.data()[i] = values.data()[i] + 10.0;
  const bool lossless =
      compress(half_zero, {CompressionMode::kSparsifyTopK, 8, 0.5}).decode() == half_zero;
  return {quant_ok && half && lossless,
          fmt::format("8-bit max error / bound {:.3f} (<= 1, 100 matrices); 16-bit bytes {} vs "
                      "32-bit {}; top-50% of half-zero lossless: {}",
                      worst, b16.up_bytes + b16.down_bytes, b32.up_bytes + b32.down_bytes,
                      lossless)};
}

Outcome determinism() {
  ExperimentConfig config = parse_config(kConfigDir / "heterogeneous_classification.yaml");
  config.output_dir = scratch("gengap_b");
  run_experiment(config);
  std::size_t compared = 0;
  std::vector<std::string> mismatched;
  for (const auto& entry : fs::recursive_directory_iterator(kGenGapRun)) {
    if (entry.path().extension() != ".csv") continue;
    const fs::path other = config.output_dir / fs::relative(entry.path(), kGenGapRun);
    ++compared;
    if (slurp(entry.path()) != slurp(other)) mismatched.push_back(other.string());
  }
  fs::remove_all(config.output_dir);
  fs::remove_all(kGenGapRun);
  const bool pass = compared > 0 && mismatched.empty();
  return {pass, fmt::format("{} metric CSVs compared byte-for-byte, {} differ", compared,
                            mismatched.size())};
}

}  // namespace

int main() {
  double gengap_runtime = 0.0;
  const std::vector<Criterion> criteria = {
      {1, "stacking exactness", 1.0, stacking_exactness},
      {2, "FedEx exactness", 1.0, fedex_exactness},
      {3, "NA gradient check", 5.0, gradient_check},
      {4, "NA oracle equivalence", 10.0, oracle_equivalence},
      {5, "Eckart-Young floor", 10.0, eckart_young},
      {6, "divergence dominance", 300.0, divergence_dominance},
      {7, "communication ledger ratios", 1.0, comm_ratios},
      {8, "generalization-gap direction", 600.0, generalization_gap},
      {9, "heterogeneity sweep", 900.0, heterogeneity_sweep},
      {10, "decomposition comparison", 60.0, decomposition_comparison},
      {11, "compression bounds", 5.0, compression_bounds},
      // The second run is compared against the criterion-8 artifacts.
      {12, "determinism", 0.0, determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.id == 8) gengap_runtime = elapsed;
    // Two full runs may take twice as long as criterion 8; the first one
    // was criterion 8 itself.
    const double budget = c.id == 12 ? 2.0 * gengap_runtime : c.budget_s;
    const bool in_time = elapsed <= budget;
    const bool pass = outcome.pass && in_time;
    failures += pass ? 0 : 1;
    fmt::print("{} criterion {:2d} ({}): {} | runtime {:.2f}s (budget {:.0f}s{})\n",
               pass ? "PASS" : "FAIL", c.id, c.name, outcome.detail, elapsed, budget,
               in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
