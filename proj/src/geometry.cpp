#include "eqmax/geometry.hpp"

#include <Eigen/LU>

namespace eqmax {

GeomMap GeomMap::from_vertices(const std::array<Vec3, 4> &v) {
  GeomMap m;
  m.b = v[0];
  m.B.col(0) = v[1] - v[0];
  m.B.col(1) = v[2] - v[0];
  m.B.col(2) = v[3] - v[0];
  m.det = m.B.determinant();
  const double scale = m.B.colwise().norm().maxCoeff();
  if (!(std::abs(m.det) > 1e-12 * scale * scale * scale))
    throw Error(ErrorKind::DegenerateElement, "affine map with |det B| = " +
                                                  std::to_string(std::abs(m.det)));
  m.Binv = m.B.inverse();
  m.BinvT = m.Binv.transpose();
  return m;
}

GeomMap tet_map(const Topology &topo, int t) {
  return GeomMap::from_vertices(topo.sorted_coords(t));
}

PiolaFactor piola_factor(const GeomMap &map, Family family, Quantity quantity) {
  PiolaFactor f;
  const bool value = quantity == Quantity::Value;
  switch (family) {
  case Family::P:
    f.P = value ? MatX::Identity(1, 1) : MatX(map.BinvT);
    break;
  case Family::N:
    f.P = value ? MatX(map.BinvT) : MatX(map.B);
    f.s = value ? 1.0 : 1.0 / map.det;
    break;
  case Family::RT:
    f.P = value ? MatX(map.B) : MatX::Identity(1, 1);
    f.s = 1.0 / map.det;
    break;
  }
  return f;
}

void push_forward(const GeomMap &map, Family family, const MatX &ref_values,
                  const MatX &ref_derivs, MatX &values, MatX &derivs) {
  const PiolaFactor fv = piola_factor(map, family, Quantity::Value);
  const PiolaFactor fd = piola_factor(map, family, Quantity::Deriv);
  values.noalias() = fv.s * fv.P * ref_values;
  derivs.noalias() = fd.s * fd.P * ref_derivs;
}

Vec3c pull_back(const GeomMap &map, Family family, const Vec3c &f) {
  switch (family) {
  case Family::N:
    return map.B.transpose().cast<cplx>() * f;
  case Family::RT:
    return (map.det * map.Binv).cast<cplx>() * f;
  case Family::P:
    break;
  }
  return f;
}

MatX element_matrix(const GeomMap &map, const ReferenceBasis &A, Quantity qa,
                    const ReferenceBasis &B, Quantity qb, const MatX &W) {
  const PiolaFactor fa = piola_factor(map, A.family(), qa);
  const PiolaFactor fb = piola_factor(map, B.family(), qb);
  const MatX C = (fa.s * fb.s * map.abs_det()) * fa.P.transpose() * W * fb.P;
  const auto &T = reference_pairing(A, qa, B, qb);
  const int dimB = static_cast<int>(C.cols());
  MatX E = MatX::Zero(A.size(), B.size());
  for (int a = 0; a < C.rows(); ++a)
    for (int b = 0; b < dimB; ++b)
      if (C(a, b) != 0.0)
        E.noalias() += C(a, b) * T[a * dimB + b];
  return E;
}

double ref_barycentric(int i, const Vec3 &xh) {
  return i == 0 ? 1.0 - xh.sum() : xh[i - 1];
}

Vec3 ref_barycentric_grad(int i) {
  return i == 0 ? Vec3(-1.0, -1.0, -1.0) : Vec3::Unit(i - 1);
}

} // namespace eqmax
