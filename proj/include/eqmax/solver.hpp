#pragma once

#include "eqmax/space.hpp"

#include <memory>

namespace eqmax {

struct SolveInfo {
  double residual = 0.0;
};

/// Sparse direct solve of A x = rhs. Throws SolverFailure when the relative
/// residual exceeds tol.
VecC solve_sparse(const SpMatC &A, const VecC &rhs, double tol = 1e-10,
                  SolveInfo *info = nullptr);
/// Real matrix with complex right-hand side: one real factorization serves
/// both parts.
VecC solve_sparse(const SpMat &A, const VecC &rhs, double tol = 1e-10, SolveInfo *info = nullptr);

/// LU factorization of a real sparse square matrix, reusable for many
/// right-hand sides.
class RealSparseLU {
public:
  RealSparseLU();
  ~RealSparseLU();
  RealSparseLU(RealSparseLU &&) noexcept;
  RealSparseLU &operator=(RealSparseLU &&) noexcept;

  /// Throws numerical-failure if the matrix is singular.
  void factorize(const SpMat &A);
  MatX solve(const MatX &rhs) const;
  int rows() const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

} // namespace eqmax
