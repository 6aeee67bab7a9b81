#pragma once

#include "eqmax/basis.hpp"
#include "eqmax/mesh.hpp"

namespace eqmax {

/// Affine map x = B x̂ + b from the reference tet. Built from the sorted
/// vertex order, so det B may be negative.
struct GeomMap {
  Mat3 B;
  Mat3 Binv;
  Mat3 BinvT;
  Vec3 b;
  double det = 0.0;

  static GeomMap from_vertices(const std::array<Vec3, 4> &v);

  Vec3 to_physical(const Vec3 &xh) const { return B * xh + b; }
  Vec3 to_reference(const Vec3 &x) const { return Binv * (x - b); }
  double abs_det() const { return std::abs(det); }
};

GeomMap tet_map(const Topology &topo, int t);

/// Linear transform P and scale s such that physical = s · P · reference for
/// the given family/quantity (covariant, contravariant, or H1).
struct PiolaFactor {
  MatX P;
  double s = 1.0;
};

PiolaFactor piola_factor(const GeomMap &map, Family family, Quantity quantity);

/// Maps reference values (value_dim × n) and derivatives (deriv_dim × n) to
/// physical ones.
void push_forward(const GeomMap &map, Family family, const MatX &ref_values,
                  const MatX &ref_derivs, MatX &values, MatX &derivs);

/// Pulls a physical field back to the reference frame so that reference DOFs
/// equal physical DOFs: N → Bᵀ f, RT → det B · B⁻¹ f, P → f.
Vec3c pull_back(const GeomMap &map, Family family, const Vec3c &f);

/// Element matrix ∫_K (Φ_A)ᵀ W (Φ_B) with Φ the pushed-forward values or
/// derivatives, W a constant physical weight (dimA × dimB).
MatX element_matrix(const GeomMap &map, const ReferenceBasis &A, Quantity qa,
                    const ReferenceBasis &B, Quantity qb, const MatX &W);

/// Barycentric coordinate i of the reference point.
double ref_barycentric(int i, const Vec3 &xh);
/// Gradient of the reference barycentric coordinate i.
Vec3 ref_barycentric_grad(int i);

} // namespace eqmax
