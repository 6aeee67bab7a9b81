#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <complex>
#include <stdexcept>
#include <string>

namespace eqmax {

using cplx = std::complex<double>;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec3c = Eigen::Vector3cd;
using Mat3c = Eigen::Matrix3cd;
using VecX = Eigen::VectorXd;
using VecC = Eigen::VectorXcd;
using MatX = Eigen::MatrixXd;
using MatC = Eigen::MatrixXcd;

inline constexpr cplx kI{0.0, 1.0};

enum class ErrorKind {
  InvalidArgument,
  Parse,
  InvalidMesh,
  NonconformingMesh,
  UnsupportedDegree,
  DegenerateElement,
  SolverFailure,
  EquilibrationFailure,
  Infeasible,
  NumericalFailure,
  InsufficientData,
  Resonance,
  Internal,
};

const char *to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Raised by the sparse solver when the residual contract cannot be met.
class SolverFailure : public Error {
public:
  SolverFailure(const std::string &what, double residual)
      : Error(ErrorKind::SolverFailure, what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

#define EQMAX_REQUIRE(cond, kind, msg)                                                        \
  do {                                                                                         \
    if (!(cond))                                                                               \
      throw ::eqmax::Error((kind), (msg));                                                     \
  } while (0)

} // namespace eqmax
