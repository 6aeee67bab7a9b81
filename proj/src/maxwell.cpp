#include "eqmax/maxwell.hpp"

#include <cmath>

namespace eqmax {

PrimalSolution solve_maxwell(std::shared_ptr<const Topology> topo, int p, double omega,
                             const CoefficientField &coeffs, const VectorFunction &J,
                             const MaxwellOptions &opts) {
  EQMAX_REQUIRE(p >= 1 && p <= kMaxVectorDegree - 2, ErrorKind::UnsupportedDegree,
                "polynomial degree p must lie in 1.." + std::to_string(kMaxVectorDegree - 2));
  auto RT = build_space(topo, Family::RT, p);
  const int proxy = opts.source_proxy_degree >= 0 ? opts.source_proxy_degree : p + 4;
  return solve_maxwell(topo, p, omega, coeffs, interpolate(RT, J, proxy), opts);
}

PrimalSolution solve_maxwell(std::shared_ptr<const Topology> topo, int p, double omega,
                             const CoefficientField &coeffs, const DiscreteField &J_h,
                             const MaxwellOptions &opts) {
  EQMAX_REQUIRE(p >= 1 && p <= kMaxVectorDegree - 2, ErrorKind::UnsupportedDegree,
                "polynomial degree p must lie in 1.." + std::to_string(kMaxVectorDegree - 2));
  EQMAX_REQUIRE(omega > 0.0, ErrorKind::InvalidArgument, "omega must be positive");
  EQMAX_REQUIRE(J_h.space && J_h.space->family() == Family::RT && J_h.space->degree() == p &&
                    &J_h.space->topo() == topo.get(),
                ErrorKind::InvalidArgument, "J_h must live in RT_p on the same mesh");
  coeffs.validate();
  PrimalSolution sol;
  sol.topo = topo;
  sol.p = p;
  sol.omega = omega;
  sol.W = build_space(topo, Family::N, p, Constraint::Boundary);
  sol.RT = J_h.space;
  sol.J = J_h;
  sol.ndof = sol.W->num_free();
  const SpMat A = assemble_maxwell_real(*sol.W, omega, coeffs);
  const VecC rhs = assemble_load(*sol.W, J_h, omega);
  SolveInfo info;
  const VecC x = solve_sparse(A, rhs, opts.tol, &info);
  sol.residual = info.residual;
  sol.E = DiscreteField(sol.W, extend_from_free(*sol.W, x));
  return sol;
}

namespace {

template <class Integrand>
EnergyNorm accumulate_norm(const Topology &topo, int quad_degree, Integrand &&per_element) {
  EnergyNorm out;
  out.per_element.resize(topo.num_tets());
  double total = 0.0;
  for (int t = 0; t < topo.num_tets(); ++t) {
    const double sq = per_element(t, tet_quadrature(quad_degree));
    out.per_element[t] = std::sqrt(std::max(sq, 0.0));
    total += sq;
  }
  out.total = std::sqrt(std::max(total, 0.0));
  return out;
}

} // namespace

EnergyNorm energy_norm(const DiscreteField &u, double omega, const CoefficientField &coeffs) {
  const Space &S = *u.space;
  EQMAX_REQUIRE(S.family() == Family::N, ErrorKind::InvalidArgument,
                "energy norm needs a curl-conforming field");
  const auto &b = S.basis();
  return accumulate_norm(S.topo(), 0, [&](int t, const QuadRule &) {
    const int r = S.topo().mesh.region_of_tet[t];
    const VecC c = u.local(t);
    const MatX M = element_matrix(S.map(t), b, Quantity::Value, b, Quantity::Value,
                                  MatX(coeffs.epsilon(r)));
    const MatX K = element_matrix(S.map(t), b, Quantity::Deriv, b, Quantity::Deriv,
                                  MatX(coeffs.chi(r)));
    return omega * omega * c.dot(M.cast<cplx>() * c).real() + c.dot(K.cast<cplx>() * c).real();
  });
}

EnergyNorm energy_norm(const Topology &topo, const AnalyticField &u, const DiscreteField *u_h,
                       double omega, const CoefficientField &coeffs, int quad_degree) {
  if (u_h)
    EQMAX_REQUIRE(&u_h->space->topo() == &topo, ErrorKind::InvalidArgument,
                  "field lives on a different mesh");
  return accumulate_norm(topo, quad_degree, [&](int t, const QuadRule &rule) {
    const int r = topo.mesh.region_of_tet[t];
    const Mat3 eps = coeffs.epsilon(r);
    const Mat3 chi = coeffs.chi(r);
    const GeomMap m = tet_map(topo, t);
    FieldValues fh;
    if (u_h)
      fh = eval_field_rule(*u_h, t, quad_degree);
    double sum = 0.0;
    for (int k = 0; k < rule.size(); ++k) {
      const Vec3 x = m.to_physical(rule.points[k]);
      Vec3c v = u.value(x), c = u.curl(x);
      if (u_h) {
        v -= fh.values.col(k);
        c -= fh.derivs.col(k);
      }
      const double mass = (v.dot(eps.cast<cplx>() * v)).real();
      const double stiff = (c.dot(chi.cast<cplx>() * c)).real();
      sum += rule.weights[k] * (omega * omega * mass + stiff);
    }
    return sum * m.abs_det();
  });
}

} // namespace eqmax
