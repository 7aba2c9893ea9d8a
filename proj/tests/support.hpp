#pragma once

#include "fedlora/aggregation.hpp"
#include "fedlora/rng.hpp"

#include <Eigen/Eigenvalues>

#include <random>
#include <string>
#include <vector>

namespace fedlora::testing {

inline DenseMatrix random_matrix(Index rows, Index cols, Rng& rng,
                                 double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  DenseMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline DenseMatrix mat(Index rows, Index cols, std::initializer_list<double> v) {
  DenseMatrix m(rows, cols);
  Index i = 0;
  for (double x : v) m.data()[i++] = x;
  return m;
}

inline ClientUpdate single_layer_update(std::size_t u, LoraPair pair,
                                        std::size_t samples = 1,
                                        const std::string& layer = "layer00") {
  ClientUpdate update;
  update.client_id = "client" + std::to_string(u);
  update.adapters.emplace(layer, std::move(pair));
  update.sample_count = samples;
  return update;
}

/// U random clients with one layer each; `ranks` gives each client's rank
/// (uniform `r` when empty).
inline std::vector<ClientUpdate> random_updates(std::size_t clients, Index k,
                                                Index d, Index r, Rng& rng,
                                                std::vector<Index> ranks = {},
                                                double alpha = 0.0) {
  std::vector<ClientUpdate> updates;
  std::uniform_int_distribution<std::size_t> samples(1, 50);
  for (std::size_t u = 0; u < clients; ++u) {
    const Index ru = ranks.empty() ? r : ranks[u];
    LoraPair pair{random_matrix(ru, d, rng), random_matrix(k, ru, rng),
                  alpha > 0.0 ? alpha : static_cast<double>(ru)};
    updates.push_back(single_layer_update(u, std::move(pair), samples(rng)));
  }
  return updates;
}

/// The two-client hand instance: B1=[1;1], A1=[1,0], B2=[2;2], A2=[0,1],
/// r = alpha = 1.
inline std::vector<ClientUpdate> hand_instance() {
  return {single_layer_update(0, {mat(1, 2, {1, 0}), mat(2, 1, {1, 1}), 1.0}),
          single_layer_update(1, {mat(1, 2, {0, 1}), mat(2, 1, {2, 2}), 1.0})};
}

/// Identity-target instance: B_u = e_u, A_u = e_u^T, r = 1, uniform weights
/// give target 0.5 I.
inline std::vector<ClientUpdate> identity_instance() {
  return {single_layer_update(0, {mat(1, 2, {1, 0}), mat(2, 1, {1, 0}), 1.0}),
          single_layer_update(1, {mat(1, 2, {0, 1}), mat(2, 1, {0, 1}), 1.0})};
}

/// Singular values from the eigenvalues of M^T M (independent of the SVD
/// routines under test), descending.
inline std::vector<double> singular_values(const DenseMatrix& m) {
  const Eigen::MatrixXd gram = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  std::vector<double> out;
  for (Index i = eig.eigenvalues().size() - 1; i >= 0; --i) {
    out.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()[i])));
  }
  return out;
}

// Sum of squared singular values beyond the first r.
inline double tail_energy(const DenseMatrix& m, Index r) {
  const Eigen::MatrixXd gram = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  double tail = 0.0;
  const Index n = eig.eigenvalues().size();
  for (Index i = 0; i < n - r; ++i) tail += std::max(0.0, eig.eigenvalues()[i]);
  return tail;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1e-8, std::abs(analytic), std::abs(numeric)});
}

}  // namespace fedlora::testing
