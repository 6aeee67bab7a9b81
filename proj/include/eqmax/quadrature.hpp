#pragma once

#include "eqmax/common.hpp"

#include <vector>

namespace eqmax {

/// Quadrature on a reference simplex. Tet weights sum to 1/6, triangle
/// weights to 1/2, interval weights to 1.
struct QuadRule {
  std::vector<Vec3> points;
  std::vector<double> weights;
  int degree = 0;

  int size() const { return static_cast<int>(weights.size()); }
};

inline constexpr int kMaxQuadratureDegree = 30;

/// Collapsed (conical product) Gauss-Jacobi rule on the reference tet,
/// exact for polynomials of total degree <= degree.
const QuadRule &tet_quadrature(int degree);

/// Rule on the reference triangle {s,t >= 0, s+t <= 1}; z coordinate unused.
const QuadRule &triangle_quadrature(int degree);

/// Gauss-Legendre on [0,1]; only x coordinate used.
const QuadRule &line_quadrature(int degree);

/// Gauss-Jacobi nodes/weights for weight (1-x)^alpha on [0,1].
void gauss_jacobi01(int n, double alpha, std::vector<double> &x, std::vector<double> &w);

} // namespace eqmax
