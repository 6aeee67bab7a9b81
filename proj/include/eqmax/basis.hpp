#pragma once

#include "eqmax/common.hpp"
#include "eqmax/quadrature.hpp"

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

namespace eqmax {

/// Polynomial families on the reference tetrahedron (0, e1, e2, e3):
///   P_q  scalar polynomials of degree <= q (orthonormal, discontinuous),
///   N_q  = x × P_q^3 + P_q^3  (first-kind Nédélec, curl-conforming),
///   RT_q = x P_q + P_q^3      (Raviart-Thomas, div-conforming).
enum class Family { P, N, RT };

const char *to_string(Family f);

inline constexpr int kMaxVectorDegree = 5;
inline constexpr int kMaxScalarDegree = 8;

int family_dimension(Family f, int q);

/// Monomials (x-c)^a (y-c)^b (z-c)^c of total degree <= max_degree in graded
/// order, centred at the reference centroid for conditioning.
class Monomials {
public:
  explicit Monomials(int max_degree, const Vec3 &origin = Vec3::Constant(0.25));
  int size() const { return static_cast<int>(exps_.size()); }
  int max_degree() const { return max_degree_; }
  const std::array<int, 3> &exponent(int i) const { return exps_[i]; }
  int index(int a, int b, int c) const;
  /// Values (size) and partial derivatives (3 × size).
  void eval(const Vec3 &x, VecX &values, MatX *grads = nullptr) const;

private:
  int max_degree_;
  Vec3 origin_;
  std::vector<std::array<int, 3>> exps_;
};

/// Values and derivatives at a set of points. For each point, `values[k]` is
/// value_dim × nbasis and `derivs[k]` is deriv_dim × nbasis (gradient for P,
/// curl for N, divergence for RT).
struct Tabulation {
  int value_dim = 0;
  int deriv_dim = 0;
  std::vector<MatX> values;
  std::vector<MatX> derivs;
  int num_points() const { return static_cast<int>(values.size()); }
};

/// Linear functional  v -> Σ_k w_k · v(x_k)  on reference fields.
struct DofFunctional {
  std::vector<Vec3> points;
  std::vector<Vec3> weights; // scalar families use weights[k].x()
};

class ReferenceBasis {
public:
  ReferenceBasis(Family family, int degree);

  Family family() const { return family_; }
  int degree() const { return degree_; }
  int size() const { return size_; }
  int value_dim() const { return family_ == Family::P ? 1 : 3; }
  int deriv_dim() const { return family_ == Family::RT ? 1 : 3; }
  /// Polynomial degree of values / derivatives (for exact quadrature).
  int value_degree() const;
  int deriv_degree() const;

  int dofs_per_edge() const { return per_edge_; }
  int dofs_per_face() const { return per_face_; }
  int dofs_per_cell() const { return per_cell_; }

  void eval(const Vec3 &x, MatX &values, MatX &derivs) const;
  Tabulation tabulate(const std::vector<Vec3> &points) const;
  /// Cached tabulation on tet_quadrature(quad_degree).
  const Tabulation &tabulate_rule(int quad_degree) const;

  /// DOF functionals integrated with quadrature exact for integrands of the
  /// given field degree (field degree + test degree).
  std::vector<DofFunctional> dof_functionals(int field_degree) const;
  /// Applies the DOFs to a reference-frame field.
  VecC apply_dofs(const std::function<Vec3c(const Vec3 &)> &f, int field_degree) const;
  /// Matrix of DOFs applied to the basis (identity up to round-off).
  MatX dof_matrix() const;

  /// Per-basis coefficient matrices over monomials (nmono × value_dim).
  const std::vector<MatX> &coefficients() const { return coeffs_; }
  const Monomials &monomials() const { return monos_; }

private:
  std::vector<MatX> spanning_set() const;

  Family family_;
  int degree_;
  int size_ = 0;
  int per_edge_ = 0, per_face_ = 0, per_cell_ = 0;
  Monomials monos_;
  std::vector<MatX> coeffs_;
  mutable std::mutex cache_mutex_;
  mutable std::map<int, std::unique_ptr<Tabulation>> tab_cache_;
};

/// Cached reference basis; throws unsupported-degree outside the table.
const ReferenceBasis &reference_basis(Family family, int degree);

Tabulation eval_scalar_basis(int q, const std::vector<Vec3> &points);
Tabulation eval_nedelec_basis(int q, const std::vector<Vec3> &points);
Tabulation eval_rt_basis(int q, const std::vector<Vec3> &points);

/// Shifted Legendre polynomial L_k on [0,1].
double legendre01(int k, double t);

enum class Quantity { Value, Deriv };

/// Reference pairing tensor T[a*dimB + b](i,j) = ∫ A_i^a B_j^b over the
/// reference tet, where A/B are values or derivatives of the two bases.
const std::vector<MatX> &reference_pairing(const ReferenceBasis &A, Quantity qa,
                                           const ReferenceBasis &B, Quantity qb);

/// Matrix (to.size × from.size) of the DOFs of `to` applied to λ̂_i φ̂_j with
/// φ̂_j the basis of `from` (or its curl/div when `quantity` is Deriv) and λ̂_i a
/// reference barycentric coordinate (lambda = -1 for no factor). DOFs are
/// invariant under the Piola maps, so for N→N, RT→RT, curl N→RT and P→P the
/// same matrix acts on physical coefficients of every element. For div RT→P
/// the physical coefficients carry an extra 1/det B.
const MatX &reference_transfer(const ReferenceBasis &from, const ReferenceBasis &to, int lambda,
                               Quantity quantity = Quantity::Value);

} // namespace eqmax
