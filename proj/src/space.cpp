#include "eqmax/space.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace eqmax {

namespace {

const Mat3 &lookup(const std::map<int, Mat3> &m, int region) {
  static const Mat3 identity = Mat3::Identity();
  auto it = m.find(region);
  return it == m.end() ? identity : it->second;
}

void check_spd(const Mat3 &A, const std::string &name, int region) {
  EQMAX_REQUIRE((A - A.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, A.norm()),
                ErrorKind::InvalidArgument,
                name + " in region " + std::to_string(region) + " is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> eig(A);
  EQMAX_REQUIRE(eig.eigenvalues().minCoeff() > 0.0, ErrorKind::InvalidArgument,
                name + " in region " + std::to_string(region) + " is not positive definite");
}

} // namespace

Mat3 CoefficientField::epsilon(int region) const { return lookup(epsilon_by_region, region); }
Mat3 CoefficientField::chi(int region) const { return lookup(chi_by_region, region); }
Mat3 CoefficientField::mu(int region) const { return chi(region).inverse(); }
Mat3 CoefficientField::epsilon_inv(int region) const { return epsilon(region).inverse(); }

CoefficientField::Bounds CoefficientField::bounds(int region) const {
  Eigen::SelfAdjointEigenSolver<Mat3> e(epsilon(region)), c(chi(region));
  return {e.eigenvalues().minCoeff(), e.eigenvalues().maxCoeff(), c.eigenvalues().minCoeff(),
          c.eigenvalues().maxCoeff()};
}

void CoefficientField::validate() const {
  for (const auto &[r, A] : epsilon_by_region)
    check_spd(A, "epsilon", r);
  for (const auto &[r, A] : chi_by_region)
    check_spd(A, "chi", r);
}

Space::Space(std::shared_ptr<const Topology> topo, Family family, int degree,
             Constraint constraint, const std::vector<int> &faces)
    : topo_(std::move(topo)), basis_(&reference_basis(family, degree)) {
  const Topology &T = *topo_;
  const ReferenceBasis &b = *basis_;
  EQMAX_REQUIRE(family != Family::P || constraint == Constraint::None,
                ErrorKind::InvalidArgument, "broken P spaces carry no trace constraint");
  face_offset_ = T.num_edges() * b.dofs_per_edge();
  cell_offset_ = face_offset_ + T.num_faces() * b.dofs_per_face();
  ndofs_ = cell_offset_ + T.num_tets() * b.dofs_per_cell();

  const int n = b.size();
  dofs_.resize(static_cast<std::size_t>(T.num_tets()) * n);
  maps_.reserve(T.num_tets());
  for (int t = 0; t < T.num_tets(); ++t) {
    int *d = dofs_.data() + static_cast<std::size_t>(t) * n;
    int i = 0;
    for (int e = 0; e < 6; ++e)
      for (int k = 0; k < b.dofs_per_edge(); ++k)
        d[i++] = edge_dof(T.tet_edges[t][e], k);
    for (int f = 0; f < 4; ++f)
      for (int k = 0; k < b.dofs_per_face(); ++k)
        d[i++] = face_dof(T.tet_faces[t][f], k);
    for (int k = 0; k < b.dofs_per_cell(); ++k)
      d[i++] = cell_dof(t, k);
    maps_.push_back(tet_map(T, t));
  }

  std::vector<int> cfaces;
  if (constraint == Constraint::Boundary) {
    for (int f = 0; f < T.num_faces(); ++f)
      if (T.face_on_boundary[f])
        cfaces.push_back(f);
  } else if (constraint == Constraint::Faces) {
    for (int f : faces) {
      EQMAX_REQUIRE(f >= 0 && f < T.num_faces(), ErrorKind::InvalidArgument,
                    "constrained face id out of range");
      EQMAX_REQUIRE(T.face_on_boundary[f], ErrorKind::InvalidArgument,
                    "constrained face " + std::to_string(f) + " is not on the boundary");
      cfaces.push_back(f);
    }
  }
  std::vector<char> constrained(ndofs_, 0);
  for (int f : cfaces) {
    for (int k = 0; k < b.dofs_per_face(); ++k)
      constrained[face_dof(f, k)] = 1;
    if (b.dofs_per_edge() > 0) {
      const auto &v = T.faces[f];
      for (auto [i, j] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
        const int e = T.find_edge(v[i], v[j]);
        for (int k = 0; k < b.dofs_per_edge(); ++k)
          constrained[edge_dof(e, k)] = 1;
      }
    }
  }
  global_to_free_.assign(ndofs_, -1);
  for (int g = 0; g < ndofs_; ++g)
    if (!constrained[g]) {
      global_to_free_[g] = static_cast<int>(free_to_global_.size());
      free_to_global_.push_back(g);
    }
}

std::shared_ptr<const Space> build_space(std::shared_ptr<const Topology> topo, Family family,
                                         int degree, Constraint constraint,
                                         const std::vector<int> &faces) {
  return std::make_shared<const Space>(std::move(topo), family, degree, constraint, faces);
}

VecC DiscreteField::local(int t) const {
  const auto d = space->element_dofs(t);
  VecC c(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    c[i] = coeffs[d[i]];
  return c;
}

DiscreteField interpolate(std::shared_ptr<const Space> space, const VectorFunction &f,
                          int proxy_degree) {
  DiscreteField u(space);
  const Family fam = space->family();
  const ReferenceBasis &b = space->basis();
  for (int t = 0; t < space->topo().num_tets(); ++t) {
    const GeomMap &m = space->map(t);
    const VecC c = b.apply_dofs(
        [&](const Vec3 &xh) { return pull_back(m, fam, f(m.to_physical(xh))); }, proxy_degree);
    const auto d = space->element_dofs(t);
    for (std::size_t i = 0; i < d.size(); ++i)
      u.coeffs[d[i]] = c[i];
  }
  return u;
}

FieldValues eval_local(const GeomMap &map, const ReferenceBasis &basis, const VecC &coeffs,
                       const Tabulation &tab) {
  const PiolaFactor fv = piola_factor(map, basis.family(), Quantity::Value);
  const PiolaFactor fd = piola_factor(map, basis.family(), Quantity::Deriv);
  const MatC Pv = (fv.s * fv.P).cast<cplx>();
  const MatC Pd = (fd.s * fd.P).cast<cplx>();
  FieldValues out;
  out.values.resize(tab.value_dim, tab.num_points());
  out.derivs.resize(tab.deriv_dim, tab.num_points());
  for (int k = 0; k < tab.num_points(); ++k) {
    out.values.col(k) = Pv * (tab.values[k].cast<cplx>() * coeffs);
    out.derivs.col(k) = Pd * (tab.derivs[k].cast<cplx>() * coeffs);
  }
  return out;
}

FieldValues eval_field(const DiscreteField &u, int t, const std::vector<Vec3> &ref_points) {
  const Tabulation tab = u.space->basis().tabulate(ref_points);
  return eval_local(u.space->map(t), u.space->basis(), u.local(t), tab);
}

FieldValues eval_field_rule(const DiscreteField &u, int t, int quad_degree) {
  return eval_local(u.space->map(t), u.space->basis(), u.local(t),
                    u.space->basis().tabulate_rule(quad_degree));
}

SpMat assemble_matrix(const Space &test, const Space &trial,
                      const std::function<MatX(int t)> &local) {
  EQMAX_REQUIRE(&test.topo() == &trial.topo(), ErrorKind::InvalidArgument,
                "spaces live on different meshes");
  std::vector<Eigen::Triplet<double>> trip;
  for (int t = 0; t < test.topo().num_tets(); ++t) {
    const MatX E = local(t);
    const auto rd = test.element_dofs(t);
    const auto cd = trial.element_dofs(t);
    for (std::size_t i = 0; i < rd.size(); ++i) {
      const int fi = test.free_index(rd[i]);
      if (fi < 0)
        continue;
      for (std::size_t j = 0; j < cd.size(); ++j) {
        const int fj = trial.free_index(cd[j]);
        if (fj >= 0 && E(i, j) != 0.0)
          trip.emplace_back(fi, fj, E(i, j));
      }
    }
  }
  SpMat A(test.num_free(), trial.num_free());
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

SpMat assemble_mass(const Space &W, const CoefficientField &coeffs) {
  const auto &b = W.basis();
  return assemble_matrix(W, W, [&](int t) {
    const MatX eps = coeffs.epsilon(W.topo().mesh.region_of_tet[t]);
    return element_matrix(W.map(t), b, Quantity::Value, b, Quantity::Value, eps);
  });
}

SpMat assemble_curlcurl(const Space &W, const CoefficientField &coeffs) {
  const auto &b = W.basis();
  return assemble_matrix(W, W, [&](int t) {
    const MatX chi = coeffs.chi(W.topo().mesh.region_of_tet[t]);
    return element_matrix(W.map(t), b, Quantity::Deriv, b, Quantity::Deriv, chi);
  });
}

SpMat assemble_maxwell_real(const Space &W, double omega, const CoefficientField &coeffs) {
  EQMAX_REQUIRE(omega > 0.0, ErrorKind::InvalidArgument, "omega must be positive");
  EQMAX_REQUIRE(W.family() == Family::N, ErrorKind::InvalidArgument,
                "Maxwell form needs a Nedelec space");
  const auto &b = W.basis();
  return assemble_matrix(W, W, [&](int t) {
    const int r = W.topo().mesh.region_of_tet[t];
    const MatX eps = coeffs.epsilon(r);
    const MatX chi = coeffs.chi(r);
    return MatX(-omega * omega *
                    element_matrix(W.map(t), b, Quantity::Value, b, Quantity::Value, eps) +
                element_matrix(W.map(t), b, Quantity::Deriv, b, Quantity::Deriv, chi));
  });
}

SpMatC assemble_maxwell(const Space &W, double omega, const CoefficientField &coeffs) {
  return assemble_maxwell_real(W, omega, coeffs).cast<cplx>();
}

VecC assemble_load(const Space &W, const DiscreteField &J, double omega) {
  EQMAX_REQUIRE(&J.space->topo() == &W.topo(), ErrorKind::InvalidArgument,
                "load field lives on a different mesh");
  const auto &bw = W.basis();
  const auto &bj = J.space->basis();
  const MatX I3 = MatX::Identity(3, 3);
  VecC rhs = VecC::Zero(W.num_free());
  for (int t = 0; t < W.topo().num_tets(); ++t) {
    const MatX E = element_matrix(W.map(t), bw, Quantity::Value, bj, Quantity::Value, I3);
    const VecC loc = (kI * omega) * (E.cast<cplx>() * J.local(t));
    const auto d = W.element_dofs(t);
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int fi = W.free_index(d[i]);
      if (fi >= 0)
        rhs[fi] += loc[i];
    }
  }
  return rhs;
}

VecC restrict_to_free(const Space &s, const VecC &full) {
  VecC out(s.num_free());
  for (int i = 0; i < s.num_free(); ++i)
    out[i] = full[s.free_dofs()[i]];
  return out;
}

VecC extend_from_free(const Space &s, const VecC &free) {
  VecC out = VecC::Zero(s.num_dofs());
  for (int i = 0; i < s.num_free(); ++i)
    out[s.free_dofs()[i]] = free[i];
  return out;
}

} // namespace eqmax
