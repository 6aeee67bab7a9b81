#pragma once

#include "eqmax/equilibrate.hpp"
#include "eqmax/maxwell.hpp"

#include <optional>

namespace eqmax {

/// Standing-wave solution of the PEC unit cube driven by J = sin(mπx₃)e₂ at
/// ω = 2π(m/2 + δ), scaled so that −ω²E + curl curl E = iωJ.
struct ExactSolution {
  int m = 1;
  double delta = 0.5;
  double omega = 0.0;
  double k = 0.0;
  VectorFunction E;
  VectorFunction curlE;
  VectorFunction J;

  AnalyticField field() const { return {E, curlE}; }
};

/// Rejects δ = 0 (and any ω with sin k = 0) as resonant, ω ≤ mπ as evanescent.
ExactSolution manufactured_solution(int m, double delta);

/// −ω²εE + curl χ curl E − iωJ at x for ε = χ = I, from closed-form second
/// derivatives.
Vec3c strong_residual(const ExactSolution &s, const Vec3 &x);

struct LocalEstimators {
  std::vector<double> eta_div;
  std::vector<double> eta_curl;
};

/// η_div,K = ω‖E_h − ε⁻¹D_h‖_{ε,K} and η_curl,K = ‖curl E_h − iωχ⁻¹H_h‖_{χ,K}.
LocalEstimators local_estimators(const DiscreteField &E_h, const DiscreteField &D_h,
                                 const DiscreteField &H_h, const CoefficientField &coeffs,
                                 double omega);

/// Energy error against the analytic field; quad_degree < 0 selects max(2p+4, 10).
EnergyNorm energy_error(const DiscreteField &E_h, const ExactSolution &exact,
                        const CoefficientField &coeffs, int quad_degree = -1);

struct EstimatorReport {
  std::vector<double> eta_div_K, eta_curl_K, eta_K, err_K;
  double eta_div = 0.0;
  double eta_curl = 0.0;
  double eta = 0.0;
  double err = 0.0;
  /// η/ℰ; empty when ℰ = 0.
  std::optional<double> effectivity;
  ResidualReport residuals;
  int ndof = 0;
  double h = 0.0;
};

EstimatorReport effectivity_report(const LocalEstimators &est, const EnergyNorm &err,
                                   const ResidualReport &residuals, int ndof, double h);

} // namespace eqmax
