#pragma once

#include "eqmax/equilibrate.hpp"
#include "eqmax/estimate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <random>
#include <sstream>

namespace eqmax::testing {

inline Mesh single_tet_mesh() {
  Mesh m;
  m.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.tets = {{0, 1, 2, 3}};
  m.region_of_tet = {0};
  m.boundary_faces = {{{1, 2, 3}, 0}, {{0, 2, 3}, 0}, {{0, 1, 3}, 0}, {{0, 1, 2}, 0}};
  return m;
}

/// Structured cube with vertices moved tangentially to the boundary.
inline Mesh jittered_cube(int n, double amplitude, unsigned seed) {
  Mesh m = generate_structured_cube(n);
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude / n, amplitude / n);
  for (auto &x : m.vertices)
    for (int c = 0; c < 3; ++c)
      if (x[c] > 1e-12 && x[c] < 1.0 - 1e-12)
        x[c] += u(rng);
  return m;
}

inline std::shared_ptr<const Topology> topology(Mesh m) {
  return std::make_shared<const Topology>(build_topology(std::move(m)));
}

inline VecC random_vector(int n, std::mt19937 &rng) {
  std::normal_distribution<double> d;
  VecC v(n);
  for (int i = 0; i < n; ++i)
    v[i] = cplx(d(rng), d(rng));
  return v;
}

inline DiscreteField random_field(std::shared_ptr<const Space> s, std::mt19937 &rng) {
  const VecC free = random_vector(s->num_free(), rng);
  return DiscreteField(s, extend_from_free(*s, free));
}

/// Brute-force constrained least squares by explicit elimination: a
/// column-pivoted QR of Cᵀ splits x into range(Cᵀ) and ker(C) parts.
struct OracleResult {
  VecC x;
  int rank = 0;
  double inconsistency = 0.0;
};

inline OracleResult oracle_solve(const KKTSystem &s) {
  const int n = s.num_vars();
  const int m = s.num_constraints();
  OracleResult out;
  if (m == 0) {
    out.x = s.A.llt().solve(s.f);
    return out;
  }
  Eigen::ColPivHouseholderQR<MatX> qr(s.C.transpose());
  qr.setThreshold(1e-11);
  const int r = static_cast<int>(qr.rank());
  const MatX Q = qr.householderQ() * MatX::Identity(n, n);
  const MatX R1t = qr.matrixR().topRows(r).triangularView<Eigen::Upper>().toDenseMatrix().transpose();
  const VecC Pg = qr.colsPermutation().transpose() * s.g;
  const MatX L = R1t.topRows(r);
  VecC y1(r);
  y1.real() = L.triangularView<Eigen::Lower>().solve(Pg.head(r).real());
  y1.imag() = L.triangularView<Eigen::Lower>().solve(Pg.head(r).imag());
  const VecC rest = R1t.cast<cplx>() * y1 - Pg;
  out.inconsistency = rest.norm() / std::max(1.0, s.g.norm());
  const MatX Q1 = Q.leftCols(r), Q2 = Q.rightCols(n - r);
  const VecC x1 = Q1.cast<cplx>() * y1;
  VecC x = x1;
  if (n > r) {
    const MatX Ar = Q2.transpose() * s.A * Q2;
    const VecC rhs = Q2.transpose().cast<cplx>() * (s.f - s.A.cast<cplx>() * x1);
    x += Q2.cast<cplx>() * Eigen::LDLT<MatX>(Ar).solve(rhs);
  }
  out.x = x;
  out.rank = r;
  return out;
}

inline double rel_diff(const VecC &a, const VecC &b) {
  const double s = std::max(a.norm(), b.norm());
  return s > 0.0 ? (a - b).norm() / s : 0.0;
}

inline double rel_diff(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s > 0.0 ? std::abs(a - b) / s : 0.0;
}

/// Primal solve on a mesh with a random RT_p source.
inline PrimalSolution random_primal(std::shared_ptr<const Topology> topo, int p, double omega,
                                    const CoefficientField &coeffs, unsigned seed) {
  std::mt19937 rng(seed);
  auto R = build_space(topo, Family::RT, p);
  const DiscreteField J(R, random_vector(R->num_dofs(), rng));
  return solve_maxwell(topo, p, omega, coeffs, J);
}

} // namespace eqmax::testing
