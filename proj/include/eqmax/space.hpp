#pragma once

#include "eqmax/basis.hpp"
#include "eqmax/geometry.hpp"
#include "eqmax/mesh.hpp"

#include <Eigen/SparseCore>

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <vector>

namespace eqmax {

using SpMat = Eigen::SparseMatrix<double>;
using SpMatC = Eigen::SparseMatrix<cplx>;

/// Piecewise-constant SPD tensors ε and χ = μ⁻¹ per region (identity where a
/// region is not listed).
struct CoefficientField {
  std::map<int, Mat3> epsilon_by_region;
  std::map<int, Mat3> chi_by_region;

  Mat3 epsilon(int region) const;
  Mat3 chi(int region) const;
  Mat3 mu(int region) const;
  Mat3 epsilon_inv(int region) const;

  struct Bounds {
    double eps_min, eps_max, chi_min, chi_max;
  };
  Bounds bounds(int region) const;
  /// Throws invalid-argument unless every tensor is symmetric and positive.
  void validate() const;
};

/// Essential trace constraint of a space: tangential for N, normal for RT.
enum class Constraint {
  None,
  Boundary, // every boundary face of the topology
  Faces,    // the explicit face list
};

/// Global conforming DOF map. Local entities follow the ascending-vertex
/// order of each tet, so shared DOFs coincide without signs.
class Space {
public:
  Space(std::shared_ptr<const Topology> topo, Family family, int degree,
        Constraint constraint = Constraint::None, const std::vector<int> &faces = {});

  const Topology &topo() const { return *topo_; }
  const std::shared_ptr<const Topology> &topo_ptr() const { return topo_; }
  Family family() const { return basis_->family(); }
  int degree() const { return basis_->degree(); }
  const ReferenceBasis &basis() const { return *basis_; }

  int num_dofs() const { return ndofs_; }
  int num_free() const { return static_cast<int>(free_to_global_.size()); }
  int local_size() const { return basis_->size(); }

  std::span<const int> element_dofs(int t) const {
    return {dofs_.data() + static_cast<std::size_t>(t) * local_size(),
            static_cast<std::size_t>(local_size())};
  }
  /// Free index of a global DOF, -1 when constrained.
  int free_index(int g) const { return global_to_free_[g]; }
  bool is_constrained(int g) const { return global_to_free_[g] < 0; }
  const std::vector<int> &free_dofs() const { return free_to_global_; }

  /// DOF ranges of an entity.
  int edge_dof(int e, int k) const { return e * basis_->dofs_per_edge() + k; }
  int face_dof(int f, int k) const { return face_offset_ + f * basis_->dofs_per_face() + k; }
  int cell_dof(int t, int k) const { return cell_offset_ + t * basis_->dofs_per_cell() + k; }

  const GeomMap &map(int t) const { return maps_[t]; }

private:
  std::shared_ptr<const Topology> topo_;
  const ReferenceBasis *basis_;
  int ndofs_ = 0;
  int face_offset_ = 0;
  int cell_offset_ = 0;
  std::vector<int> dofs_;
  std::vector<int> global_to_free_;
  std::vector<int> free_to_global_;
  std::vector<GeomMap> maps_;
};

std::shared_ptr<const Space> build_space(std::shared_ptr<const Topology> topo, Family family,
                                         int degree, Constraint constraint = Constraint::None,
                                         const std::vector<int> &faces = {});

/// Complex coefficients over all DOFs of a space (constrained ones included).
struct DiscreteField {
  std::shared_ptr<const Space> space;
  VecC coeffs;

  DiscreteField() = default;
  explicit DiscreteField(std::shared_ptr<const Space> s)
      : space(std::move(s)), coeffs(VecC::Zero(space->num_dofs())) {}
  DiscreteField(std::shared_ptr<const Space> s, VecC c) : space(std::move(s)), coeffs(std::move(c)) {}

  VecC local(int t) const;
};

using VectorFunction = std::function<Vec3c(const Vec3 &)>;

/// DOF functionals applied to f on every element. `proxy_degree` is the
/// polynomial degree assumed for f when choosing the moment quadrature.
DiscreteField interpolate(std::shared_ptr<const Space> space, const VectorFunction &f,
                          int proxy_degree);

/// Physical values (value_dim × npts) and curl/div/grad (deriv_dim × npts).
struct FieldValues {
  MatC values;
  MatC derivs;
};

FieldValues eval_field(const DiscreteField &u, int t, const std::vector<Vec3> &ref_points);
/// Same on the points of tet_quadrature(quad_degree), using cached tables.
FieldValues eval_field_rule(const DiscreteField &u, int t, int quad_degree);
/// Evaluates local coefficients of a family/degree on an element.
FieldValues eval_local(const GeomMap &map, const ReferenceBasis &basis, const VecC &coeffs,
                       const Tabulation &tab);

/// Sparse matrix over free DOFs from element matrices local(t) (test × trial).
SpMat assemble_matrix(const Space &test, const Space &trial,
                      const std::function<MatX(int t)> &local);

/// Real parts of the Maxwell form: mass (εφ_j, φ_i) and stiffness (χ curl φ_j, curl φ_i).
SpMat assemble_mass(const Space &W, const CoefficientField &coeffs);
SpMat assemble_curlcurl(const Space &W, const CoefficientField &coeffs);

/// A_ij = −ω²(εφ_j, φ_i) + (χ curl φ_j, curl φ_i) over free DOFs.
SpMatC assemble_maxwell(const Space &W, double omega, const CoefficientField &coeffs);
/// Same form with real storage (the coefficients are real).
SpMat assemble_maxwell_real(const Space &W, double omega, const CoefficientField &coeffs);

/// iω (J_h, φ_i) over free DOFs of W.
VecC assemble_load(const Space &W, const DiscreteField &J, double omega);

/// Restriction of a full DOF vector to free DOFs and the reverse embedding.
VecC restrict_to_free(const Space &s, const VecC &full);
VecC extend_from_free(const Space &s, const VecC &free);

} // namespace eqmax
