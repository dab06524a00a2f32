#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sjlgm/data.hpp"

namespace sjlgm {

/// Besag structure matrix plus the Leroux-style proper mixing.
/// The joint precision consistent with the neighbor-average conditional is
/// tau * Omega with omega_kk = n_k and omega_kj = -1 for neighbors; the
/// proper version mixes in an independence component on the precision side.
struct CarStructure {
  AdjacencyGraph graph;
  double tau = 1.0;
  double zeta = 0.95;  // in (0,1); 1 = intrinsic (simulation only)
};

inline Eigen::SparseMatrix<double> build_structure_matrix(const AdjacencyGraph& g) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(g.K + 2 * g.edges.size());
  const auto deg = g.neighbor_counts();
  for (int k = 0; k < g.K; ++k) t.emplace_back(k, k, static_cast<double>(deg[k]));
  for (auto [a, b] : g.edges) {
    t.emplace_back(a, b, -1.0);
    t.emplace_back(b, a, -1.0);
  }
  Eigen::SparseMatrix<double> omega(g.K, g.K);
  omega.setFromTriplets(t.begin(), t.end());
  return omega;
}

/// Q_nu = tau * ((1-zeta) I + zeta Omega); positive definite for zeta < 1.
inline Eigen::SparseMatrix<double> proper_besag_precision(const CarStructure& s) {
  if (!(s.zeta > 0.0 && s.zeta < 1.0))
    throw std::invalid_argument("proper_besag_precision: zeta must be in (0,1)");
  if (!(s.tau > 0.0)) throw std::invalid_argument("proper_besag_precision: tau must be positive");
  Eigen::SparseMatrix<double> q = build_structure_matrix(s.graph);
  q *= s.zeta;
  Eigen::SparseMatrix<double> id(s.graph.K, s.graph.K);
  id.setIdentity();
  q += (1.0 - s.zeta) * id;
  q *= s.tau;
  return q;
}

namespace detail {

inline std::vector<int> connected_components(const AdjacencyGraph& g) {
  std::vector<int> comp(g.K, -1);
  const auto nb = g.neighbor_lists();
  int c = 0;
  for (int seed = 0; seed < g.K; ++seed) {
    if (comp[seed] >= 0) continue;
    std::vector<int> stack{seed};
    comp[seed] = c;
    while (!stack.empty()) {
      const int k = stack.back();
      stack.pop_back();
      for (int j : nb[k])
        if (comp[j] < 0) {
          comp[j] = c;
          stack.push_back(j);
        }
    }
    ++c;
  }
  return comp;
}

}  // namespace detail

/// Draws nu ~ N(0, Q^-1). For zeta < 1 the proper precision is used directly.
/// For zeta == 1 (intrinsic) the draw is from tau*Omega under a sum-to-zero
/// constraint per connected component, imposed by conditioning-by-kriging.
inline Eigen::VectorXd sample_car_field(const CarStructure& s, std::uint64_t seed) {
  const int K = s.graph.K;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  Eigen::VectorXd z(K);
  for (int k = 0; k < K; ++k) z[k] = norm(rng);

  if (s.zeta < 1.0) {
    Eigen::SparseMatrix<double> q = proper_besag_precision(s);
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(q);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("sample_car_field: precision factorization failed");
    // x = P' L^-T z gives cov P' L^-T L^-1 P = Q^-1.
    Eigen::VectorXd x = llt.matrixU().solve(z);
    return llt.permutationPinv() * x;
  }

  if (!(s.tau > 0.0)) throw std::invalid_argument("sample_car_field: tau must be positive");
  // Intrinsic case: factor tau*Omega + small per-component ridge, then
  // correct the draw to satisfy the sum-to-zero constraints exactly.
  Eigen::SparseMatrix<double> q = build_structure_matrix(s.graph);
  q *= s.tau;
  Eigen::SparseMatrix<double> id(K, K);
  id.setIdentity();
  const double ridge = 1e-8 * s.tau;
  q += ridge * id;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(q);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_car_field: intrinsic factorization failed");
  Eigen::VectorXd x = llt.permutationPinv() * static_cast<Eigen::VectorXd>(llt.matrixU().solve(z));

  // Conditioning by kriging: x - Sigma A' (A Sigma A')^-1 A x with A the
  // per-component sum constraints.
  const auto comp = detail::connected_components(s.graph);
  const int ncomp = 1 + *std::max_element(comp.begin(), comp.end());
  Eigen::MatrixXd At(K, ncomp);  // A'
  At.setZero();
  for (int k = 0; k < K; ++k) At(k, comp[k]) = 1.0;
  Eigen::MatrixXd SigmaAt(K, ncomp);
  for (int c = 0; c < ncomp; ++c)
    SigmaAt.col(c) = llt.solve(At.col(c));
  const Eigen::MatrixXd M = At.transpose() * SigmaAt;  // A Sigma A'
  const Eigen::VectorXd Ax = At.transpose() * x;
  return x - SigmaAt * M.ldlt().solve(Ax);
}

}  // namespace sjlgm
