#include "eqmax/estimate.hpp"

#include "eqmax/quadrature.hpp"

#include <cmath>
#include <numbers>

namespace eqmax {

ExactSolution manufactured_solution(int m, double delta) {
  EQMAX_REQUIRE(m >= 1, ErrorKind::InvalidArgument, "mode m must be at least 1");
  EQMAX_REQUIRE(delta != 0.0, ErrorKind::Resonance, "delta = 0 puts omega on a cavity resonance");
  const double pi = std::numbers::pi;
  ExactSolution s;
  s.m = m;
  s.delta = delta;
  s.omega = 2.0 * pi * (0.5 * m + delta);
  const double k2 = s.omega * s.omega - (m * pi) * (m * pi);
  EQMAX_REQUIRE(k2 > 0.0, ErrorKind::InvalidArgument,
                "omega <= m*pi gives an evanescent profile (delta must be positive)");
  s.k = std::sqrt(k2);
  const double sk = std::sin(s.k);
  EQMAX_REQUIRE(std::abs(sk) > 1e-12, ErrorKind::Resonance,
                "sin(k) = 0 puts omega on a cavity resonance");

  const double k = s.k, ck = std::cos(k), mp = m * pi;
  const cplx c = kI * s.omega / (k * k);
  auto f = [=](double x) { return (std::cos(k * x) - 1.0) - (ck - 1.0) * std::sin(k * x) / sk; };
  auto df = [=](double x) { return -k * std::sin(k * x) - (ck - 1.0) * k * std::cos(k * x) / sk; };
  s.E = [=](const Vec3 &x) {
    return Vec3c(0.0, c * f(x[0]) * std::sin(mp * x[2]), 0.0);
  };
  s.curlE = [=](const Vec3 &x) {
    return Vec3c(-c * f(x[0]) * mp * std::cos(mp * x[2]), 0.0,
                 c * df(x[0]) * std::sin(mp * x[2]));
  };
  s.J = [=](const Vec3 &x) { return Vec3c(0.0, std::sin(mp * x[2]), 0.0); };
  return s;
}

Vec3c strong_residual(const ExactSolution &s, const Vec3 &x) {
  const double k = s.k, mp = s.m * std::numbers::pi;
  const double sk = std::sin(k), ck = std::cos(k);
  const double f = (std::cos(k * x[0]) - 1.0) - (ck - 1.0) * std::sin(k * x[0]) / sk;
  const double d2f = -k * k * std::cos(k * x[0]) + (ck - 1.0) * k * k * std::sin(k * x[0]) / sk;
  const cplx c = kI * s.omega / (k * k);
  const double sz = std::sin(mp * x[2]);
  // curl curl (E₂e₂) = −(∂₁₁E₂ + ∂₃₃E₂) e₂ for E₂ independent of x₂.
  const cplx E2 = c * f * sz;
  const cplx lap = c * d2f * sz - c * f * mp * mp * sz;
  return Vec3c(0.0, -s.omega * s.omega * E2 - lap - kI * s.omega * sz, 0.0);
}

LocalEstimators local_estimators(const DiscreteField &E_h, const DiscreteField &D_h,
                                 const DiscreteField &H_h, const CoefficientField &coeffs,
                                 double omega) {
  const Topology &topo = E_h.space->topo();
  EQMAX_REQUIRE(&D_h.space->topo() == &topo && &H_h.space->topo() == &topo,
                ErrorKind::InvalidArgument, "estimator fields live on different meshes");
  EQMAX_REQUIRE(E_h.space->family() == Family::N && D_h.space->family() == Family::RT &&
                    H_h.space->family() == Family::N,
                ErrorKind::InvalidArgument, "estimator expects E_h, H_h in N and D_h in RT");
  const int deg = 2 * std::max({E_h.space->degree(), D_h.space->degree(), H_h.space->degree()});
  const QuadRule &rule = tet_quadrature(deg);
  LocalEstimators out;
  out.eta_div.resize(topo.num_tets());
  out.eta_curl.resize(topo.num_tets());
  for (int t = 0; t < topo.num_tets(); ++t) {
    const int r = topo.mesh.region_of_tet[t];
    const Mat3c eps = coeffs.epsilon(r).cast<cplx>();
    const Mat3c eps_inv = coeffs.epsilon_inv(r).cast<cplx>();
    const Mat3c chi = coeffs.chi(r).cast<cplx>();
    const Mat3c mu = coeffs.mu(r).cast<cplx>();
    const FieldValues e = eval_field_rule(E_h, t, deg);
    const MatC d = eval_field_rule(D_h, t, deg).values;
    const MatC h = eval_field_rule(H_h, t, deg).values;
    double sdiv = 0.0, scurl = 0.0;
    for (int k = 0; k < rule.size(); ++k) {
      const Vec3c a = e.values.col(k) - eps_inv * d.col(k);
      const Vec3c b = e.derivs.col(k) - kI * omega * (mu * h.col(k));
      sdiv += rule.weights[k] * a.dot(eps * a).real();
      scurl += rule.weights[k] * b.dot(chi * b).real();
    }
    const double J = E_h.space->map(t).abs_det();
    out.eta_div[t] = omega * std::sqrt(std::max(sdiv * J, 0.0));
    out.eta_curl[t] = std::sqrt(std::max(scurl * J, 0.0));
  }
  return out;
}

EnergyNorm energy_error(const DiscreteField &E_h, const ExactSolution &exact,
                        const CoefficientField &coeffs, int quad_degree) {
  if (quad_degree < 0)
    quad_degree = std::max(2 * E_h.space->degree() + 4, 10);
  return energy_norm(E_h.space->topo(), exact.field(), &E_h, exact.omega, coeffs, quad_degree);
}

EstimatorReport effectivity_report(const LocalEstimators &est, const EnergyNorm &err,
                                   const ResidualReport &residuals, int ndof, double h) {
  EQMAX_REQUIRE(est.eta_div.size() == err.per_element.size() &&
                    est.eta_curl.size() == err.per_element.size(),
                ErrorKind::InvalidArgument, "estimators and errors cover different meshes");
  EstimatorReport r;
  r.eta_div_K = est.eta_div;
  r.eta_curl_K = est.eta_curl;
  r.err_K = err.per_element;
  r.eta_K.resize(est.eta_div.size());
  double sd = 0.0, sc = 0.0;
  for (std::size_t t = 0; t < r.eta_K.size(); ++t) {
    const double a = est.eta_div[t] * est.eta_div[t];
    const double b = est.eta_curl[t] * est.eta_curl[t];
    r.eta_K[t] = std::sqrt(a + b);
    sd += a;
    sc += b;
  }
  r.eta_div = std::sqrt(sd);
  r.eta_curl = std::sqrt(sc);
  r.eta = std::sqrt(sd + sc);
  r.err = err.total;
  if (r.err > 0.0)
    r.effectivity = r.eta / r.err;
  r.residuals = residuals;
  r.ndof = ndof;
  r.h = h;
  return r;
}

} // namespace eqmax
