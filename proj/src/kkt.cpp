#include "eqmax/kkt.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

namespace eqmax {

double KKTSystem::objective(const VecC &x) const {
  return x.dot(A.cast<cplx>() * x).real() - 2.0 * x.dot(f).real();
}

void DenseKKT::factorize(const MatX &A, const MatX &C) {
  const int n = static_cast<int>(A.rows());
  const int m = static_cast<int>(C.rows());
  EQMAX_REQUIRE(A.cols() == n && (m == 0 || C.cols() == n), ErrorKind::InvalidArgument,
                "KKT dimensions do not match");
  A_ = A;
  C_ = C;
  if (m == 0) {
    rank_ = 0;
    Ur_.resize(0, 0);
    Vr_.resize(n, 0);
    sinv_.resize(0);
    Z_ = MatX::Identity(n, n);
  } else {
    Eigen::BDCSVD<MatX> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto &sv = svd.singularValues();
    const double smax = sv.size() ? sv.maxCoeff() : 0.0;
    int r = 0;
    while (r < sv.size() && sv[r] > 1e-12 * std::max(n, m) * smax)
      ++r;
    rank_ = r;
    Ur_ = svd.matrixU().leftCols(r);
    Vr_ = svd.matrixV().leftCols(r);
    sinv_ = sv.head(r).cwiseInverse();
    Z_ = svd.matrixV().rightCols(n - r);
  }
  if (Z_.cols() > 0) {
    llt_.compute(Z_.transpose() * A_ * Z_);
    if (llt_.info() != Eigen::Success)
      throw Error(ErrorKind::NumericalFailure, "reduced objective is not positive definite");
  }
}

KKTSolution DenseKKT::solve(const VecC &f, const VecC &g, const KKTTolerances &tol) const {
  const int m = static_cast<int>(C_.rows());
  EQMAX_REQUIRE(f.size() == A_.rows() && g.size() == m, ErrorKind::InvalidArgument,
                "right-hand side dimensions do not match");
  KKTSolution out;
  out.constraint_rank = rank_;
  const MatC Ac = A_.cast<cplx>();
  VecC x = VecC::Zero(A_.rows());
  if (m > 0) {
    x = Vr_.cast<cplx>() *
        (sinv_.cast<cplx>().asDiagonal() * (Ur_.transpose().cast<cplx>() * g));
    const double res = (C_.cast<cplx>() * x - g).norm() / (1.0 + g.norm());
    if (!(res <= tol.feasibility))
      throw Error(ErrorKind::Infeasible,
                  "constraints inconsistent: projected residual " + std::to_string(res));
  }
  const MatC Zc = Z_.cast<cplx>();
  if (Z_.cols() > 0)
    x += Zc * llt_.solve(Zc.adjoint() * (f - Ac * x));
  out.constraint_residual = m ? (C_.cast<cplx>() * x - g).norm() / (1.0 + g.norm()) : 0.0;
  out.stationarity_residual = (Zc.adjoint() * (Ac * x - f)).norm() / (1.0 + f.norm());
  if (!(out.constraint_residual <= tol.feasibility) ||
      !(out.stationarity_residual <= tol.stationarity))
    throw Error(ErrorKind::NumericalFailure,
                "KKT residuals too large: constraint " + std::to_string(out.constraint_residual) +
                    ", stationarity " + std::to_string(out.stationarity_residual));
  out.x = std::move(x);
  return out;
}

KKTSolution solve_constrained_ls(const KKTSystem &sys, const KKTTolerances &tol) {
  EQMAX_REQUIRE(sys.f.size() == sys.A.rows(), ErrorKind::InvalidArgument,
                "objective dimensions do not match");
  EQMAX_REQUIRE(sys.g.size() == sys.C.rows(), ErrorKind::InvalidArgument,
                "constraint dimensions do not match");
  DenseKKT kkt;
  kkt.factorize(sys.A, sys.C);
  return kkt.solve(sys.f, sys.g, tol);
}

SpMat block_matrix(int rows, int cols,
                   const std::vector<std::tuple<int, int, const SpMat *, bool>> &blocks) {
  std::vector<Eigen::Triplet<double>> trip;
  for (const auto &[r0, c0, B, transpose] : blocks)
    for (int k = 0; k < B->outerSize(); ++k)
      for (SpMat::InnerIterator it(*B, k); it; ++it) {
        const int i = transpose ? static_cast<int>(it.col()) : static_cast<int>(it.row());
        const int j = transpose ? static_cast<int>(it.row()) : static_cast<int>(it.col());
        trip.emplace_back(r0 + i, c0 + j, it.value());
      }
  SpMat K(rows, cols);
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

void SparseKKT::factorize(const SpMat &A, const SpMat &C) {
  n_ = static_cast<int>(A.rows());
  m_ = static_cast<int>(C.rows());
  EQMAX_REQUIRE(A.cols() == n_ && (m_ == 0 || C.cols() == n_), ErrorKind::InvalidArgument,
                "KKT block dimensions do not match");
  lu_.factorize(block_matrix(n_ + m_, n_ + m_, {{0, 0, &A, false}, {n_, 0, &C, false},
                                                {0, n_, &C, true}}));
}

VecC SparseKKT::solve(const VecC &f, const VecC &g) const {
  VecC rhs(n_ + m_);
  rhs << f, g;
  return solve_complex(lu_, rhs).head(n_);
}

VecC solve_complex(const RealSparseLU &lu, const VecC &rhs) {
  MatX b(rhs.size(), 2);
  b.col(0) = rhs.real();
  b.col(1) = rhs.imag();
  const MatX sol = lu.solve(b);
  VecC x(rhs.size());
  x.real() = sol.col(0);
  x.imag() = sol.col(1);
  return x;
}

} // namespace eqmax
