#include "eqmax/solver.hpp"

#include <Eigen/UmfPackSupport>

#include <cstdio>

namespace eqmax {

namespace {

// Global systems have a symmetric pattern; nested dissection keeps the fill
// of 3D factorizations manageable. Small (patch) systems use the defaults.
constexpr int kLargeSystem = 20000;

template <class LU> void configure(LU &lu, Eigen::Index rows) {
  if (rows >= kLargeSystem) {
    lu.umfpackControl()(UMFPACK_STRATEGY) = UMFPACK_STRATEGY_SYMMETRIC;
    lu.umfpackControl()(UMFPACK_ORDERING) = UMFPACK_ORDERING_CHOLMOD;
  }
}

std::string describe(int status) {
  switch (status) {
  case UMFPACK_ERROR_out_of_memory:
    return "out of memory";
  case UMFPACK_WARNING_singular_matrix:
    return "matrix singular to working precision";
  default:
    return "UMFPACK status " + std::to_string(status);
  }
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

template <class Mat, class Apply>
VecC refine_and_check(const Mat &A, const VecC &rhs, double tol, SolveInfo *info, VecC x,
                      Apply &&apply) {
  const double bnorm = rhs.norm();
  double res = (A * x - rhs).norm() / bnorm;
  // One step of iterative refinement tightens near-singular systems.
  if (res > 0.1 * tol && std::isfinite(res)) {
    x += apply(VecC(rhs - A * x));
    res = (A * x - rhs).norm() / bnorm;
  }
  if (info)
    info->residual = res;
  if (!(res <= tol))
    throw SolverFailure("relative residual " + sci(res) + " exceeds " + sci(tol), res);
  return x;
}

} // namespace

VecC solve_sparse(const SpMatC &A, const VecC &rhs, double tol, SolveInfo *info) {
  EQMAX_REQUIRE(A.rows() == A.cols() && A.rows() == rhs.size(), ErrorKind::InvalidArgument,
                "solve_sparse: dimension mismatch");
  if (rhs.norm() == 0.0) {
    if (info)
      info->residual = 0.0;
    return VecC::Zero(rhs.size());
  }
  SpMatC Ac = A;
  Ac.makeCompressed();
  Eigen::UmfPackLU<SpMatC> lu;
  configure(lu, Ac.rows());
  lu.compute(Ac);
  if (lu.info() != Eigen::Success)
    throw SolverFailure("sparse factorization failed (" + describe(lu.umfpackFactorizeReturncode()) + ")",
                        std::numeric_limits<double>::infinity());
  return refine_and_check(Ac, rhs, tol, info, VecC(lu.solve(rhs)),
                          [&](const VecC &r) { return VecC(lu.solve(r)); });
}

VecC solve_sparse(const SpMat &A, const VecC &rhs, double tol, SolveInfo *info) {
  EQMAX_REQUIRE(A.rows() == A.cols() && A.rows() == rhs.size(), ErrorKind::InvalidArgument,
                "solve_sparse: dimension mismatch");
  if (rhs.norm() == 0.0) {
    if (info)
      info->residual = 0.0;
    return VecC::Zero(rhs.size());
  }
  RealSparseLU lu;
  try {
    lu.factorize(A);
  } catch (const Error &e) {
    throw SolverFailure(e.what(), std::numeric_limits<double>::infinity());
  }
  auto apply = [&](const VecC &b) {
    MatX rb(b.size(), 2);
    rb.col(0) = b.real();
    rb.col(1) = b.imag();
    const MatX s = lu.solve(rb);
    VecC x(b.size());
    x.real() = s.col(0);
    x.imag() = s.col(1);
    return x;
  };
  return refine_and_check(A.cast<cplx>(), rhs, tol, info, apply(rhs), apply);
}

struct RealSparseLU::Impl {
  SpMat A;
  Eigen::UmfPackLU<SpMat> lu;
};

RealSparseLU::RealSparseLU() : impl_(std::make_unique<Impl>()) {}
RealSparseLU::~RealSparseLU() = default;
RealSparseLU::RealSparseLU(RealSparseLU &&) noexcept = default;
RealSparseLU &RealSparseLU::operator=(RealSparseLU &&) noexcept = default;

void RealSparseLU::factorize(const SpMat &A) {
  impl_->A = A;
  impl_->A.makeCompressed();
  configure(impl_->lu, impl_->A.rows());
  impl_->lu.compute(impl_->A);
  if (impl_->lu.info() != Eigen::Success)
    throw Error(ErrorKind::NumericalFailure,
                "sparse LU factorization failed (" +
                    describe(impl_->lu.umfpackFactorizeReturncode()) + ")");
}

MatX RealSparseLU::solve(const MatX &rhs) const {
  MatX x = impl_->lu.solve(rhs);
  return x;
}

int RealSparseLU::rows() const { return static_cast<int>(impl_->A.rows()); }

} // namespace eqmax
