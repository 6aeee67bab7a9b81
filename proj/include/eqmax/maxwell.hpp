#pragma once

#include "eqmax/solver.hpp"
#include "eqmax/space.hpp"

namespace eqmax {

/// E_h ∈ N_p ∩ H₀(curl) solving the discrete time-harmonic Maxwell problem
/// with load iω(J_h, v) and J_h the RT_p interpolant of J.
struct PrimalSolution {
  std::shared_ptr<const Topology> topo;
  std::shared_ptr<const Space> W;
  std::shared_ptr<const Space> RT;
  DiscreteField E;
  DiscreteField J;
  double omega = 0.0;
  int p = 1;
  double residual = 0.0;
  int ndof = 0;
};

struct MaxwellOptions {
  double tol = 1e-10;
  /// Degree assumed for J when computing its RT moments.
  int source_proxy_degree = -1;
};

PrimalSolution solve_maxwell(std::shared_ptr<const Topology> topo, int p, double omega,
                             const CoefficientField &coeffs, const VectorFunction &J,
                             const MaxwellOptions &opts = {});

/// Same with a prescribed J_h over RT_p on the same topology.
PrimalSolution solve_maxwell(std::shared_ptr<const Topology> topo, int p, double omega,
                             const CoefficientField &coeffs, const DiscreteField &J_h,
                             const MaxwellOptions &opts = {});

struct EnergyNorm {
  std::vector<double> per_element;
  double total = 0.0;
};

/// Analytic field with its curl.
struct AnalyticField {
  VectorFunction value;
  VectorFunction curl;
};

/// ‖u‖_{ω,K} = (ω²‖u‖²_{ε,K} + ‖curl u‖²_{χ,K})^{1/2} per element, computed
/// exactly from element matrices.
EnergyNorm energy_norm(const DiscreteField &u, double omega, const CoefficientField &coeffs);
/// Energy norm of u − u_h (u_h may be null).
EnergyNorm energy_norm(const Topology &topo, const AnalyticField &u, const DiscreteField *u_h,
                       double omega, const CoefficientField &coeffs, int quad_degree);

} // namespace eqmax
