#pragma once

#include "eqmax/solver.hpp"

#include <Eigen/Cholesky>

#include <tuple>

namespace eqmax {

/// minimize xᴴAx − 2 Re(xᴴf) subject to C x = g, with A symmetric positive
/// definite (on the kernel of C) and C real; f, g complex.
struct KKTSystem {
  MatX A;
  VecC f;
  MatX C;
  VecC g;

  int num_vars() const { return static_cast<int>(A.rows()); }
  int num_constraints() const { return static_cast<int>(C.rows()); }
  /// xᴴAx − 2 Re(xᴴf).
  double objective(const VecC &x) const;
};

struct KKTSolution {
  VecC x;
  int constraint_rank = 0;
  double constraint_residual = 0.0;   // ‖Cx − g‖ / (1 + ‖g‖)
  double stationarity_residual = 0.0; // ‖Zᵀ(Ax − f)‖ / (1 + ‖f‖)
};

struct KKTTolerances {
  double feasibility = 1e-10;
  double stationarity = 1e-9;
};

/// Dense rank-revealing solve: minimum-norm particular solution from a
/// complete orthogonal decomposition of C, null-space basis from its SVD, and
/// a Cholesky solve of the reduced objective. Redundant constraint rows are
/// tolerated. Throws infeasible when C x = g has no solution within
/// tolerance, numerical-failure when the reduced objective is not definite.
KKTSolution solve_constrained_ls(const KKTSystem &sys, const KKTTolerances &tol = {});

/// Reusable factorization behind solve_constrained_ls: SVD of C and Cholesky
/// of the objective reduced to ker C.
class DenseKKT {
public:
  void factorize(const MatX &A, const MatX &C);
  KKTSolution solve(const VecC &f, const VecC &g, const KKTTolerances &tol = {}) const;
  int rank() const { return rank_; }

private:
  MatX A_, C_, Ur_, Vr_, Z_;
  VecX sinv_;
  Eigen::LLT<MatX> llt_;
  int rank_ = 0;
};

/// Factorized sparse KKT matrix [A Cᵀ; C 0] for full-row-rank C, reusable
/// for many right-hand sides.
class SparseKKT {
public:
  void factorize(const SpMat &A, const SpMat &C);
  /// Primal part of the solution for objective vector f and constraint rhs g.
  VecC solve(const VecC &f, const VecC &g) const;
  int num_vars() const { return n_; }
  int num_constraints() const { return m_; }

private:
  int n_ = 0, m_ = 0;
  RealSparseLU lu_;
};

/// Solves a real factorized system for a complex right-hand side.
VecC solve_complex(const RealSparseLU &lu, const VecC &rhs);

/// Block matrix helper: places sparse blocks at (row, col) offsets.
SpMat block_matrix(int rows, int cols,
                   const std::vector<std::tuple<int, int, const SpMat *, bool>> &blocks);

} // namespace eqmax
