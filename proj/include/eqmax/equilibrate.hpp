#pragma once

#include "eqmax/kkt.hpp"
#include "eqmax/maxwell.hpp"

#include <memory>
#include <functional>
#include <string>

namespace eqmax {

/// Hat function ψ^a on its patch: for each patch tet, the position of a in
/// the ascending vertex order (so ψ^a = λ̂_j on the reference) and ∇ψ^a.
struct HatFunction {
  int vertex = -1;
  std::vector<int> local_index;
  std::vector<Vec3> grad;
};

HatFunction hat_function(const Topology &topo, const Patch &patch);
/// ψ^a at a physical point of global tet t (zero if a ∉ t).
double hat_value(const Topology &topo, int a, int t, const Vec3 &x);

struct EquilibrationOptions {
  /// Feasibility / compatibility pre-checks (relative).
  double feasibility_tol = 1e-9;
  /// Post-solve constraint residuals (relative).
  double residual_tol = 1e-10;
  /// Worker threads for the patch loop (results do not depend on it).
  int threads = 1;
  /// Reuse factorizations across patches with bit-identical geometry.
  bool reuse_factorizations = true;
};

/// Patch-local spaces and data shared by the patch problems of one vertex.
/// All local spaces live on the patch topology; Γ_a^c carries the essential
/// trace constraints.
struct PatchContext {
  Patch patch;
  HatFunction hat;
  int p = 1;
  double omega = 0.0;
  std::shared_ptr<const Space> rt2;  // RT_{p+2} ∩ H₀(div) (D, G, θ̂, multiplier)
  std::shared_ptr<const Space> rt1;  // RT_{p+1} ∩ H₀(div) (θ̃)
  std::shared_ptr<const Space> n2;   // N_{p+2} ∩ H₀(curl) (H)
  std::shared_ptr<const Space> pq2;  // broken P_{p+2}
  std::shared_ptr<const Space> pq1;  // broken P_{p+1}
  std::vector<VecC> E_loc;           // E_h coefficients per patch tet (N_p)
  std::vector<VecC> J_loc;           // J_h coefficients per patch tet (RT_p)
  std::vector<int> regions;
  /// Bit-exact geometry signature used as factorization cache key.
  std::string signature;
};

PatchContext make_patch_context(const PrimalSolution &sol, int a);

/// Coefficients over all DOFs of a patch-local space.
struct PatchField {
  std::shared_ptr<const Space> space;
  VecC coeffs;
};

/// Dense description of a patch problem with every constraint row (including
/// the redundant ones removed by the production path).
KKTSystem displacement_system(const PatchContext &ctx, const CoefficientField &coeffs);
KKTSystem theta_tilde_system(const PatchContext &ctx, const CoefficientField &coeffs);
/// Magnetic problem with constraint rows (curl v, ρ) = (G/(iω), ρ) for every
/// ρ in the multiplier space RT_{p+2} ∩ H₀(div).
KKTSystem magnetic_system(const PatchContext &ctx, const CoefficientField &coeffs,
                          const PatchField &G);

/// Cache of factorizations shared by patches and elements whose geometry
/// (affine maps, connectivity, regions) is bit-identical. Thread safe; with
/// reuse disabled every request rebuilds.
class PatchSolver {
public:
  explicit PatchSolver(bool reuse = true);
  ~PatchSolver();

  template <class T>
  std::shared_ptr<const T> get(const std::string &key,
                               const std::function<std::shared_ptr<const T>()> &build) {
    return std::static_pointer_cast<const T>(
        get_any(key, [&]() -> std::shared_ptr<const void> { return build(); }));
  }
  int factorizations() const;

private:
  std::shared_ptr<const void>
  get_any(const std::string &key, const std::function<std::shared_ptr<const void>()> &build);
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// `compatibility` receives |(g^a, 1)| / ‖g^a‖ for interior vertices.
PatchField displacement_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                              const EquilibrationOptions &opts = {},
                              PatchSolver *solver = nullptr, double *compatibility = nullptr);
PatchField theta_tilde_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                             const EquilibrationOptions &opts = {},
                             PatchSolver *solver = nullptr);

/// Element problem for θ̂ on global tet t and its local vertex j: returns
/// RT_{p+2}(K) coefficients. `theta_loc` are the RT_{p+1} coefficients of the
/// accumulated θ̃_h on t.
struct ThetaHatInput {
  GeomMap map;
  Mat3 mu;
  int j = 0;
  int p = 1;
  VecC theta_loc;
  /// Σ_b ‖θ̃^b|_K‖ over the patch contributions summed into theta_loc, the
  /// magnitude at which their rounding enters the flux; 0 uses theta_loc.
  double piece_scale = 0.0;
};
KKTSystem theta_hat_system(const ThetaHatInput &in, VecC *face_values = nullptr,
                           double *flux_defect = nullptr);
/// Throws equilibration-failure when the boundary flux of ψ^a θ̃_h over ∂K
/// exceeds the feasibility tolerance, relative to the face flux magnitudes
/// or the piece scale, whichever is larger.
VecC theta_hat_element(const ThetaHatInput &in, const EquilibrationOptions &opts = {},
                       PatchSolver *solver = nullptr, double *flux_defect = nullptr);

/// G^a = iω ψ^a J_h + ω² D^a + θ̃^a − θ̂^a in patch RT_{p+2} coefficients.
/// `theta_hat` holds the element coefficients per patch tet.
PatchField current_variation_patch(const PatchContext &ctx, const PatchField &D,
                                   const PatchField &theta_tilde,
                                   const std::vector<VecC> &theta_hat,
                                   const EquilibrationOptions &opts = {},
                                   double *div_defect = nullptr);

/// `curl_defect` receives ‖iω curl H^a − G^a‖ / ‖G^a‖.
PatchField magnetic_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                          const PatchField &G, const EquilibrationOptions &opts = {},
                          PatchSolver *solver = nullptr, double *curl_defect = nullptr);

/// Adds a patch field (zero-extended) into a global conforming field.
void accumulate_global(const PatchContext &ctx, const PatchField &local, DiscreteField &global);

struct EquilibrationResult {
  DiscreteField D;           // RT_{p+2}
  DiscreteField H;           // N_{p+2}
  DiscreteField theta_tilde; // RT_{p+1}
  /// max_K ‖Σ_a θ̂^a|_K − θ̃_h|_K‖ / ‖θ̃_h|_K‖ in RT_{p+2}(K) coefficients.
  double max_theta_hat_defect = 0.0;
  /// (Σ_a ‖ω² div D^a‖²)^{1/2}, scale of the divergence identity.
  double div_scale = 0.0;
  /// Largest relative compatibility / feasibility defects met on the way.
  double max_compatibility = 0.0;
  double max_flux_defect = 0.0;
  double max_div_G = 0.0;
  double max_curl_residual = 0.0;
  int factorizations = 0;
};

/// Runs every patch problem and accumulates D_h, H_h (and θ̃_h).
EquilibrationResult equilibrate(const PrimalSolution &sol, const CoefficientField &coeffs,
                                const EquilibrationOptions &opts = {});

struct ResidualReport {
  double curl_residual = 0.0; // ‖iω curl H − iωJ − ω²D‖ / ‖iωJ + ω²D‖
  double div_residual = 0.0;  // ‖−ω² div D − iω div J‖ / scale
  double normal_jump = 0.0;   // max normal jump of D over interior faces, relative
  double tangential_jump = 0.0;
};

/// `div_scale` normalizes the divergence identity; 0 selects
/// ω²‖div D‖ + ω‖div J‖ (absolute residual when both vanish).
ResidualReport verify_equilibration(const DiscreteField &D, const DiscreteField &H,
                                    const DiscreteField &J, double omega, double div_scale = 0.0,
                                    bool scan_jumps = true);

/// Max over interior faces of the jump of v·n (RT) or v×n (N) at sample
/// points, relative to the largest sampled |v|.
double face_jump(const DiscreteField &u);

/// L² norms over the whole mesh, exact for the polynomial fields involved.
double l2_norm(const DiscreteField &u);
double l2_norm_div(const DiscreteField &u);

} // namespace eqmax
