#include "eqmax/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <memory>
#include <mutex>

namespace eqmax {

void gauss_jacobi01(int n, double alpha, std::vector<double> &x, std::vector<double> &w) {
  // Golub-Welsch for P^(alpha,0) on [-1,1], then mapped to [0,1].
  const double beta = 0.0;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    const double s = 2.0 * k + alpha + beta;
    J(k, k) = (k == 0) ? (beta - alpha) / (alpha + beta + 2.0)
                       : (beta * beta - alpha * alpha) / (s * (s + 2.0));
    if (k + 1 < n) {
      const double m = k + 1.0;
      const double t = 2.0 * m + alpha + beta;
      const double b = 4.0 * m * (m + alpha) * (m + beta) * (m + alpha + beta) /
                       (t * t * (t + 1.0) * (t - 1.0));
      J(k, k + 1) = J(k + 1, k) = std::sqrt(b);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
  const double mu0 = std::pow(2.0, alpha + beta + 1.0) * std::tgamma(alpha + 1.0) *
                     std::tgamma(beta + 1.0) / std::tgamma(alpha + beta + 2.0);
  x.resize(n);
  w.resize(n);
  const double scale = std::pow(2.0, -(alpha + 1.0));
  for (int k = 0; k < n; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    x[k] = 0.5 * (1.0 + eig.eigenvalues()(k));
    w[k] = mu0 * v0 * v0 * scale;
  }
}

namespace {

int points_for(int degree) { return degree / 2 + 1; }

QuadRule make_tet(int degree) {
  const int n = points_for(degree);
  std::vector<double> xu, wu, xv, wv, xw, ww;
  gauss_jacobi01(n, 2.0, xu, wu);
  gauss_jacobi01(n, 1.0, xv, wv);
  gauss_jacobi01(n, 0.0, xw, ww);
  QuadRule q;
  q.degree = degree;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const double u = xu[i], v = xv[j], s = xw[k];
        q.points.emplace_back(u, (1.0 - u) * v, (1.0 - u) * (1.0 - v) * s);
        q.weights.push_back(wu[i] * wv[j] * ww[k]);
      }
  return q;
}

QuadRule make_triangle(int degree) {
  const int n = points_for(degree);
  std::vector<double> xu, wu, xv, wv;
  gauss_jacobi01(n, 1.0, xu, wu);
  gauss_jacobi01(n, 0.0, xv, wv);
  QuadRule q;
  q.degree = degree;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      q.points.emplace_back(xu[i], (1.0 - xu[i]) * xv[j], 0.0);
      q.weights.push_back(wu[i] * wv[j]);
    }
  return q;
}

QuadRule make_line(int degree) {
  const int n = points_for(degree);
  std::vector<double> x, w;
  gauss_jacobi01(n, 0.0, x, w);
  QuadRule q;
  q.degree = degree;
  for (int i = 0; i < n; ++i) {
    q.points.emplace_back(x[i], 0.0, 0.0);
    q.weights.push_back(w[i]);
  }
  return q;
}

template <QuadRule (*Make)(int)>
const QuadRule &cached(int degree) {
  EQMAX_REQUIRE(degree >= 0 && degree <= kMaxQuadratureDegree, ErrorKind::UnsupportedDegree,
                "quadrature degree " + std::to_string(degree) + " not available");
  static std::array<std::unique_ptr<QuadRule>, kMaxQuadratureDegree + 1> table;
  static std::array<std::once_flag, kMaxQuadratureDegree + 1> flags;
  std::call_once(flags[degree], [&] { table[degree] = std::make_unique<QuadRule>(Make(degree)); });
  return *table[degree];
}

} // namespace

const QuadRule &tet_quadrature(int degree) { return cached<make_tet>(degree); }
const QuadRule &triangle_quadrature(int degree) { return cached<make_triangle>(degree); }
const QuadRule &line_quadrature(int degree) { return cached<make_line>(degree); }

} // namespace eqmax
