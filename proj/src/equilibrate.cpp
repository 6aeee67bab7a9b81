#include "eqmax/equilibrate.hpp"

#include <Eigen/QR>

#include <atomic>
#include <cstdio>
#include <cstring>
#include <exception>
#include <mutex>
#include <thread>
#include <unordered_map>

namespace eqmax {

namespace {

constexpr Quantity kVal = Quantity::Value;
constexpr Quantity kDer = Quantity::Deriv;

const ReferenceBasis &rb(Family f, int q) { return reference_basis(f, q); }

MatX em(const GeomMap &m, Family fa, int qa, Quantity a, Family fb, int qb, Quantity b,
        const MatX &W) {
  return element_matrix(m, rb(fa, qa), a, rb(fb, qb), b, W);
}

const MatX &transfer(Family from, int qf, Family to, int qt, int lambda,
                     Quantity q = Quantity::Value) {
  return reference_transfer(rb(from, qf), rb(to, qt), lambda, q);
}

VecC mul(const MatX &M, const VecC &v) {
  VecC out(M.rows());
  out.real() = M * v.real();
  out.imag() = M * v.imag();
  return out;
}

Mat3 skew(const Vec3 &a) {
  Mat3 S;
  S << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
  return S;
}

const MatX &one() {
  static const MatX I = MatX::Identity(1, 1);
  return I;
}

const MatX &eye3() {
  static const MatX I = MatX::Identity(3, 3);
  return I;
}

class Triplets {
public:
  void add(const Space &rs, int tr, const Space &cs, int tc, const MatX &E, int row_offset = 0,
           int col_offset = 0) {
    const auto rd = rs.element_dofs(tr);
    const auto cd = cs.element_dofs(tc);
    for (std::size_t i = 0; i < rd.size(); ++i) {
      const int fi = rs.free_index(rd[i]);
      if (fi < 0)
        continue;
      for (std::size_t j = 0; j < cd.size(); ++j) {
        const int fj = cs.free_index(cd[j]);
        if (fj >= 0 && E(i, j) != 0.0)
          t_.emplace_back(row_offset + fi, col_offset + fj, E(i, j));
      }
    }
  }
  void add_row(int row, const Space &cs, int tc, const MatX &E) {
    const auto cd = cs.element_dofs(tc);
    for (std::size_t j = 0; j < cd.size(); ++j) {
      const int fj = cs.free_index(cd[j]);
      if (fj >= 0 && E(0, j) != 0.0)
        t_.emplace_back(row, fj, E(0, j));
    }
  }
  SpMat build(int rows, int cols) const {
    SpMat A(rows, cols);
    A.setFromTriplets(t_.begin(), t_.end());
    return A;
  }

private:
  std::vector<Eigen::Triplet<double>> t_;
};

void add_free(VecC &v, const Space &s, int t, const VecC &loc) {
  const auto d = s.element_dofs(t);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int fi = s.free_index(d[i]);
    if (fi >= 0)
      v[fi] += loc[i];
  }
}

VecC gather(const Space &s, const VecC &full, int t) {
  const auto d = s.element_dofs(t);
  VecC c(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    c[i] = full[d[i]];
  return c;
}

SpMat select_rows(const SpMat &C, const std::vector<int> &rows) {
  std::vector<int> pos(C.rows(), -1);
  for (std::size_t k = 0; k < rows.size(); ++k)
    pos[rows[k]] = static_cast<int>(k);
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < C.outerSize(); ++k)
    for (SpMat::InnerIterator it(C, k); it; ++it)
      if (pos[it.row()] >= 0)
        t.emplace_back(pos[it.row()], it.col(), it.value());
  SpMat out(static_cast<int>(rows.size()), C.cols());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

VecC select(const VecC &g, const std::vector<int> &rows) {
  VecC out(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    out[k] = g[rows[k]];
  return out;
}

std::vector<int> all_but(int n, const std::vector<int> &drop) {
  std::vector<char> skip(n, 0);
  for (int d : drop)
    skip[d] = 1;
  std::vector<int> keep;
  for (int i = 0; i < n; ++i)
    if (!skip[i])
      keep.push_back(i);
  return keep;
}

double relative_residual(const SpMat &C, const VecC &x, const VecC &g) {
  const VecC r = C.cast<cplx>() * x - g;
  const double scale = g.norm() + C.norm() * x.norm();
  return scale > 0.0 ? r.norm() / scale : 0.0;
}

/// Constrained least-squares data over free DOFs, with every constraint row.
struct ProblemData {
  SpMat A;
  SpMat C;
  VecC f;
  VecC g;
  std::vector<int> keep; // linearly independent subset of the rows of C
};

KKTSystem to_dense(const ProblemData &d) {
  KKTSystem s;
  s.A = MatX(d.A);
  s.f = d.f;
  s.C = MatX(d.C);
  s.g = d.g;
  return s;
}

VecC solve_reduced(const ProblemData &d, const std::string &key, PatchSolver &solver) {
  const int n = static_cast<int>(d.A.rows());
  auto lu = solver.get<RealSparseLU>(key, [&] {
    const SpMat Ck = select_rows(d.C, d.keep);
    const int m = static_cast<int>(Ck.rows());
    auto f = std::make_shared<RealSparseLU>();
    f->factorize(block_matrix(n + m, n + m, {{0, 0, &d.A, false}, {n, 0, &Ck, false},
                                             {0, n, &Ck, true}}));
    return std::shared_ptr<const RealSparseLU>(std::move(f));
  });
  VecC rhs(n + static_cast<int>(d.keep.size()));
  rhs << d.f, select(d.g, d.keep);
  return solve_complex(*lu, rhs).head(n);
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

template <class T> void append_bytes(std::string &s, const T &v) {
  s.append(reinterpret_cast<const char *>(&v), sizeof(T));
}

// Displacement problem: RT_{p+2} ∩ H₀(div), div rows against broken P_{p+2}.
ProblemData displacement_data(const PatchContext &ctx, const CoefficientField &coeffs) {
  const Space &R = *ctx.rt2;
  const Space &Q = *ctx.pq2;
  const int p = ctx.p;
  const double w = ctx.omega;
  ProblemData d;
  d.f = VecC::Zero(R.num_free());
  d.g = VecC::Zero(Q.num_free());
  Triplets tA, tC;
  for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
    const int t = static_cast<int>(i);
    const GeomMap &m = R.map(t);
    const int j = ctx.hat.local_index[i];
    const Vec3 &gpsi = ctx.hat.grad[i];
    const Mat3 eps = coeffs.epsilon(ctx.regions[i]);
    const VecC &E = ctx.E_loc[i];
    const VecC &J = ctx.J_loc[i];
    tA.add(R, t, R, t, em(m, Family::RT, p + 2, kVal, Family::RT, p + 2, kVal, eps.inverse()));
    tC.add(Q, t, R, t, em(m, Family::P, p + 2, kVal, Family::RT, p + 2, kDer, one()));
    const VecC psiE = mul(transfer(Family::N, p, Family::N, p + 1, j), E);
    add_free(d.f, R, t, mul(em(m, Family::RT, p + 2, kVal, Family::N, p + 1, kVal, eye3()), psiE));
    const VecC psiJ = mul(transfer(Family::RT, p, Family::RT, p + 1, j), J);
    const VecC divPsiJ = mul(em(m, Family::P, p + 2, kVal, Family::RT, p + 1, kDer, one()), psiJ);
    const VecC gradPsiJ =
        mul(em(m, Family::P, p + 2, kVal, Family::RT, p, kVal, gpsi.transpose()), J);
    const VecC gradPsiEpsE =
        mul(em(m, Family::P, p + 2, kVal, Family::N, p, kVal, (eps * gpsi).transpose()), E);
    add_free(d.g, Q, t, (-kI / w) * (divPsiJ - gradPsiJ) + gradPsiEpsE);
  }
  d.A = tA.build(R.num_free(), R.num_free());
  d.C = tC.build(Q.num_free(), R.num_free());
  d.keep = all_but(Q.num_free(),
                   ctx.patch.interior ? std::vector<int>{Q.free_index(Q.cell_dof(0, 0))}
                                      : std::vector<int>{});
  return d;
}

// θ̃ problem: RT_{p+1} ∩ H₀(div), div rows against broken P_{p+1} followed by
// three elementwise mean rows per tet.
ProblemData theta_tilde_data(const PatchContext &ctx, const CoefficientField &coeffs) {
  const Space &R = *ctx.rt1;
  const Space &Q = *ctx.pq1;
  const int p = ctx.p;
  const double w = ctx.omega;
  const int nK = static_cast<int>(ctx.patch.tets.size());
  const int mdiv = Q.num_free();
  ProblemData d;
  d.f = VecC::Zero(R.num_free());
  d.g = VecC::Zero(mdiv + 3 * nK);
  Triplets tA, tC;

  // Gradients of continuous P1 functions vanishing on Γ_a, one column per
  // admissible patch vertex; they span the redundant mean-row combinations.
  const Topology &L = *ctx.patch.local;
  std::vector<char> on_gamma(L.num_vertices(), 0);
  for (int f : ctx.patch.gamma_faces)
    for (int v : L.faces[f])
      on_gamma[v] = 1;
  std::vector<int> col_of(L.num_vertices(), -1);
  int nq = 0;
  for (int v = 0; v < L.num_vertices(); ++v)
    if (!on_gamma[v])
      col_of[v] = nq++;
  MatX grads = MatX::Zero(3 * nK, nq);

  for (int t = 0; t < nK; ++t) {
    const GeomMap &m = R.map(t);
    const int j = ctx.hat.local_index[t];
    const Vec3 &gpsi = ctx.hat.grad[t];
    const int r = ctx.regions[t];
    const Mat3 eps = coeffs.epsilon(r);
    const Mat3 mu = coeffs.mu(r);
    const Mat3 chi = coeffs.chi(r);
    const Mat3 S = skew(gpsi);
    const VecC &E = ctx.E_loc[t];
    const VecC &J = ctx.J_loc[t];
    (void)j;
    tA.add(R, t, R, t, em(m, Family::RT, p + 1, kVal, Family::RT, p + 1, kVal, mu));
    tC.add(Q, t, R, t, em(m, Family::P, p + 1, kVal, Family::RT, p + 1, kDer, one()));
    add_free(d.f, R, t, mul(em(m, Family::RT, p + 1, kVal, Family::N, p, kDer, mu * S * chi), E));
    const VecC gJ = mul(em(m, Family::P, p + 1, kVal, Family::RT, p, kVal, gpsi.transpose()), J);
    const VecC gE =
        mul(em(m, Family::P, p + 1, kVal, Family::N, p, kVal, (eps * gpsi).transpose()), E);
    add_free(d.g, Q, t, (-kI * w) * gJ - (w * w) * gE);
    for (int c = 0; c < 3; ++c) {
      const MatX ec = Vec3::Unit(c).transpose();
      tC.add_row(mdiv + 3 * t + c, R, t, em(m, Family::P, 0, kVal, Family::RT, p + 1, kVal, ec));
      const MatX tau = ec * S * chi;
      d.g[mdiv + 3 * t + c] = mul(em(m, Family::P, 0, kVal, Family::N, p, kDer, tau), E)[0];
    }
    const auto &sv = L.sorted_tets[t];
    for (int k = 0; k < 4; ++k)
      if (col_of[sv[k]] >= 0)
        grads.block(3 * t, col_of[sv[k]], 3, 1) = m.BinvT * ref_barycentric_grad(k);
  }
  d.A = tA.build(R.num_free(), R.num_free());
  d.C = tC.build(mdiv + 3 * nK, R.num_free());

  std::vector<int> drop;
  if (ctx.patch.interior)
    drop.push_back(Q.free_index(Q.cell_dof(0, 0)));
  if (nq > 0) {
    Eigen::ColPivHouseholderQR<MatX> qr(grads.transpose());
    for (int k = 0; k < qr.rank(); ++k)
      drop.push_back(mdiv + qr.colsPermutation().indices()(k));
  }
  d.keep = all_but(mdiv + 3 * nK, drop);
  return d;
}

// Magnetic problem: N_{p+2} ∩ H₀(curl), curl rows against RT_{p+2} ∩ H₀(div).
// The χ⁻¹ mass is left unscaled; the dense system carries the ω² factor.
ProblemData magnetic_data(const PatchContext &ctx, const CoefficientField &coeffs,
                          const PatchField &G, SpMat *Ddiv) {
  const Space &N = *ctx.n2;
  const Space &R = *ctx.rt2;
  const Space &Q = *ctx.pq2;
  const int p = ctx.p;
  const double w = ctx.omega;
  ProblemData d;
  d.f = VecC::Zero(N.num_free());
  d.g = VecC::Zero(R.num_free());
  Triplets tA, tB, tD;
  for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
    const int t = static_cast<int>(i);
    const GeomMap &m = N.map(t);
    const int j = ctx.hat.local_index[i];
    const Mat3 chi = coeffs.chi(ctx.regions[i]);
    const Mat3 S = skew(ctx.hat.grad[i]);
    const VecC &E = ctx.E_loc[i];
    tA.add(N, t, N, t, em(m, Family::N, p + 2, kVal, Family::N, p + 2, kVal, chi.inverse()));
    tB.add(R, t, N, t, em(m, Family::RT, p + 2, kVal, Family::N, p + 2, kDer, eye3()));
    if (Ddiv)
      tD.add(Q, t, R, t, em(m, Family::P, p + 2, kVal, Family::RT, p + 2, kDer, one()));
    const VecC psiE = mul(transfer(Family::N, p, Family::N, p + 1, j), E);
    const VecC curlPsiE =
        mul(em(m, Family::N, p + 2, kVal, Family::N, p + 1, kDer, eye3()), psiE);
    const VecC gradPsiXE = mul(em(m, Family::N, p + 2, kVal, Family::N, p, kVal, S), E);
    add_free(d.f, N, t, (-kI * w) * (curlPsiE - gradPsiXE));
    const VecC Gloc = gather(R, G.coeffs, t);
    add_free(d.g, R, t,
             mul(em(m, Family::RT, p + 2, kVal, Family::RT, p + 2, kVal, eye3()), Gloc) / (kI * w));
  }
  d.A = tA.build(N.num_free(), N.num_free());
  d.C = tB.build(R.num_free(), N.num_free());
  if (Ddiv)
    *Ddiv = tD.build(Q.num_free(), R.num_free());
  return d;
}

// L² norm² over the patch of RT_{p+2} coefficients.
double rt_norm2(const Space &R, const VecC &full) {
  double s = 0.0;
  const auto &b = R.basis();
  for (int t = 0; t < R.topo().num_tets(); ++t) {
    const VecC c = gather(R, full, t);
    const MatX M = element_matrix(R.map(t), b, kVal, b, kVal, eye3());
    s += c.dot(mul(M, c)).real();
  }
  return s;
}

} // namespace

struct PatchSolver::Impl {
  struct Entry {
    std::once_flag once;
    std::shared_ptr<const void> value;
  };
  bool reuse = true;
  std::mutex mutex;
  std::unordered_map<std::string, std::shared_ptr<Entry>> entries;
  std::atomic<int> count{0};
};

PatchSolver::PatchSolver(bool reuse) : impl_(std::make_unique<Impl>()) { impl_->reuse = reuse; }
PatchSolver::~PatchSolver() = default;

int PatchSolver::factorizations() const { return impl_->count.load(); }

std::shared_ptr<const void>
PatchSolver::get_any(const std::string &key,
                     const std::function<std::shared_ptr<const void>()> &build) {
  if (!impl_->reuse) {
    ++impl_->count;
    return build();
  }
  std::shared_ptr<Impl::Entry> e;
  {
    std::lock_guard<std::mutex> lock(impl_->mutex);
    auto &slot = impl_->entries[key];
    if (!slot)
      slot = std::make_shared<Impl::Entry>();
    e = slot;
  }
  std::call_once(e->once, [&] {
    e->value = build();
    ++impl_->count;
  });
  return e->value;
}

HatFunction hat_function(const Topology &topo, const Patch &patch) {
  (void)topo;
  HatFunction h;
  h.vertex = patch.center;
  const Topology &L = *patch.local;
  for (int t = 0; t < L.num_tets(); ++t) {
    const auto &s = L.sorted_tets[t];
    const int j = static_cast<int>(std::find(s.begin(), s.end(), patch.local_center) - s.begin());
    EQMAX_REQUIRE(j < 4, ErrorKind::Internal, "patch tet does not contain the patch vertex");
    h.local_index.push_back(j);
    h.grad.push_back(tet_map(L, t).BinvT * ref_barycentric_grad(j));
  }
  return h;
}

double hat_value(const Topology &topo, int a, int t, const Vec3 &x) {
  const auto &s = topo.sorted_tets[t];
  const auto it = std::find(s.begin(), s.end(), a);
  if (it == s.end())
    return 0.0;
  return ref_barycentric(static_cast<int>(it - s.begin()), tet_map(topo, t).to_reference(x));
}

PatchContext make_patch_context(const PrimalSolution &sol, int a) {
  PatchContext ctx;
  ctx.patch = build_vertex_patch(*sol.topo, a);
  ctx.hat = hat_function(*sol.topo, ctx.patch);
  ctx.p = sol.p;
  ctx.omega = sol.omega;
  const auto &L = ctx.patch.local;
  const auto &gc = ctx.patch.gamma_c_faces;
  ctx.rt2 = build_space(L, Family::RT, sol.p + 2, Constraint::Faces, gc);
  ctx.rt1 = build_space(L, Family::RT, sol.p + 1, Constraint::Faces, gc);
  ctx.n2 = build_space(L, Family::N, sol.p + 2, Constraint::Faces, gc);
  ctx.pq2 = build_space(L, Family::P, sol.p + 2);
  ctx.pq1 = build_space(L, Family::P, sol.p + 1);
  std::string &sig = ctx.signature;
  append_bytes(sig, sol.p);
  append_bytes(sig, L->num_vertices());
  append_bytes(sig, ctx.patch.local_center);
  for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
    const int t = ctx.patch.tets[i];
    ctx.E_loc.push_back(sol.E.local(t));
    ctx.J_loc.push_back(sol.J.local(t));
    ctx.regions.push_back(sol.topo->mesh.region_of_tet[t]);
    append_bytes(sig, L->sorted_tets[i]);
    append_bytes(sig, ctx.regions.back());
    const Mat3 &B = ctx.rt2->map(static_cast<int>(i)).B;
    sig.append(reinterpret_cast<const char *>(B.data()), 9 * sizeof(double));
  }
  return ctx;
}

KKTSystem displacement_system(const PatchContext &ctx, const CoefficientField &coeffs) {
  return to_dense(displacement_data(ctx, coeffs));
}

KKTSystem theta_tilde_system(const PatchContext &ctx, const CoefficientField &coeffs) {
  return to_dense(theta_tilde_data(ctx, coeffs));
}

KKTSystem magnetic_system(const PatchContext &ctx, const CoefficientField &coeffs,
                          const PatchField &G) {
  ProblemData d = magnetic_data(ctx, coeffs, G, nullptr);
  d.A *= ctx.omega * ctx.omega;
  return to_dense(d);
}

PatchField displacement_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                              const EquilibrationOptions &opts, PatchSolver *solver,
                              double *compatibility) {
  PatchSolver fallback(false);
  PatchSolver &S = solver ? *solver : fallback;
  const ProblemData d = displacement_data(ctx, coeffs);
  if (ctx.patch.interior) {
    const Space &Q = *ctx.pq2;
    cplx total = 0.0;
    for (int t = 0; t < Q.topo().num_tets(); ++t)
      total += d.g[Q.free_index(Q.cell_dof(t, 0))];
    const double gn = d.g.norm();
    const double rel = gn > 0.0 ? std::abs(total) / gn : 0.0;
    if (compatibility)
      *compatibility = rel;
    if (!(rel <= opts.feasibility_tol))
      throw Error(ErrorKind::EquilibrationFailure,
                  "displacement compatibility violated at vertex " +
                      std::to_string(ctx.patch.center) + " (relative " + sci(rel) +
                      ")");
  } else if (compatibility) {
    *compatibility = 0.0;
  }
  const VecC x = solve_reduced(d, ctx.signature + "|D", S);
  const double res = relative_residual(d.C, x, d.g);
  if (!(res <= opts.residual_tol))
    throw Error(ErrorKind::EquilibrationFailure,
                "displacement constraint residual " + sci(res) + " at vertex " +
                    std::to_string(ctx.patch.center));
  return {ctx.rt2, extend_from_free(*ctx.rt2, x)};
}

PatchField theta_tilde_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                             const EquilibrationOptions &opts, PatchSolver *solver) {
  PatchSolver fallback(false);
  PatchSolver &S = solver ? *solver : fallback;
  const ProblemData d = theta_tilde_data(ctx, coeffs);
  const VecC x = solve_reduced(d, ctx.signature + "|T", S);
  const double res = relative_residual(d.C, x, d.g);
  if (!(res <= opts.residual_tol))
    throw Error(ErrorKind::EquilibrationFailure,
                "theta-tilde constraints infeasible at vertex " +
                    std::to_string(ctx.patch.center) + " (relative residual " +
                    sci(res) + ")");
  return {ctx.rt1, extend_from_free(*ctx.rt1, x)};
}

namespace {

struct ThetaHatOperator {
  MatX A;    // μ mass of RT_{p+2}(K)
  MatX Cdiv; // (div v, q) for orthonormal q ∈ P_{p+2}(K)
  DenseKKT kkt;
};

std::shared_ptr<const ThetaHatOperator> theta_hat_operator(const ThetaHatInput &in) {
  auto op = std::make_shared<ThetaHatOperator>();
  const int q = in.p + 2;
  const int nF = 4 * rb(Family::RT, q).dofs_per_face();
  const int nI = rb(Family::RT, q).dofs_per_cell();
  op->A = em(in.map, Family::RT, q, kVal, Family::RT, q, kVal, in.mu);
  op->Cdiv = em(in.map, Family::P, q, kVal, Family::RT, q, kDer, one());
  const int nP = static_cast<int>(op->Cdiv.rows());
  op->kkt.factorize(op->A.bottomRightCorner(nI, nI), op->Cdiv.bottomRightCorner(nP - 1, nI));
  (void)nF;
  return op;
}

// |∫_∂K ψθ̃·n| against Σ_F |∫_F ψθ̃·n| and the rounding scale of the pieces.
double relative_flux(const ThetaHatOperator &op, const ThetaHatInput &in, const VecC &w) {
  const int q = in.p + 2;
  const int nf = rb(Family::RT, q).dofs_per_face();
  const MatX &T = transfer(Family::RT, in.p + 1, Family::RT, q, in.j);
  cplx total = 0.0;
  double faces = 0.0;
  for (int f = 0; f < 4; ++f) {
    const cplx ff = mul(op.Cdiv.block(0, f * nf, 1, nf), w.segment(f * nf, nf))[0];
    total += ff;
    faces += std::abs(ff);
  }
  const double pieces =
      (op.Cdiv.topLeftCorner(1, 4 * nf) * T.topRows(4 * nf)).norm() * in.piece_scale;
  const double scale = std::max(faces, pieces);
  return scale > 0.0 ? std::abs(total) / scale : 0.0;
}

} // namespace

KKTSystem theta_hat_system(const ThetaHatInput &in, VecC *face_values, double *flux_defect) {
  const auto op = theta_hat_operator(in);
  const int q = in.p + 2;
  const int nF = 4 * rb(Family::RT, q).dofs_per_face();
  const int nI = rb(Family::RT, q).dofs_per_cell();
  const int nP = static_cast<int>(op->Cdiv.rows());
  const VecC w = mul(transfer(Family::RT, in.p + 1, Family::RT, q, in.j), in.theta_loc);
  KKTSystem s;
  s.A = op->A.bottomRightCorner(nI, nI);
  s.f = mul(s.A, w.tail(nI));
  s.C = op->Cdiv.bottomRightCorner(nP - 1, nI);
  s.g = -mul(op->Cdiv.bottomLeftCorner(nP - 1, nF), w.head(nF));
  if (face_values)
    *face_values = w.head(nF);
  if (flux_defect)
    *flux_defect = relative_flux(*op, in, w);
  return s;
}

VecC theta_hat_element(const ThetaHatInput &in, const EquilibrationOptions &opts,
                       PatchSolver *solver, double *flux_defect) {
  const int q = in.p + 2;
  std::string key = "theta_hat";
  append_bytes(key, in.p);
  append_bytes(key, in.j);
  key.append(reinterpret_cast<const char *>(in.map.B.data()), 9 * sizeof(double));
  key.append(reinterpret_cast<const char *>(in.mu.data()), 9 * sizeof(double));
  PatchSolver fallback(false);
  PatchSolver &S = solver ? *solver : fallback;
  const auto op = S.get<ThetaHatOperator>(key, [&] { return theta_hat_operator(in); });

  const int nF = 4 * rb(Family::RT, q).dofs_per_face();
  const int nI = rb(Family::RT, q).dofs_per_cell();
  const int nP = static_cast<int>(op->Cdiv.rows());
  const VecC w = mul(transfer(Family::RT, in.p + 1, Family::RT, q, in.j), in.theta_loc);
  const VecC uF = w.head(nF);
  const double defect = relative_flux(*op, in, w);
  if (flux_defect)
    *flux_defect = defect;
  if (!(defect <= opts.feasibility_tol))
    throw Error(ErrorKind::EquilibrationFailure,
                "theta-hat boundary flux " + sci(defect) + " on element with local vertex " +
                    std::to_string(in.j));
  const VecC f = mul(op->A.bottomRightCorner(nI, nI), w.tail(nI));
  const VecC g = -mul(op->Cdiv.bottomLeftCorner(nP - 1, nF), uF);
  KKTTolerances tol;
  tol.feasibility = std::max(opts.residual_tol, 1e-10);
  const KKTSolution sol = op->kkt.solve(f, g, tol);
  VecC out(nF + nI);
  out << uF, sol.x;
  return out;
}

PatchField current_variation_patch(const PatchContext &ctx, const PatchField &D,
                                   const PatchField &theta_tilde,
                                   const std::vector<VecC> &theta_hat,
                                   const EquilibrationOptions &opts, double *div_defect) {
  const Space &R = *ctx.rt2;
  const int p = ctx.p;
  const double w = ctx.omega;
  PatchField G{ctx.rt2, VecC::Zero(R.num_dofs())};
  double div2 = 0.0, scale2 = 0.0;
  for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
    const int t = static_cast<int>(i);
    const int j = ctx.hat.local_index[i];
    const VecC a = (kI * w) * mul(transfer(Family::RT, p, Family::RT, p + 2, j), ctx.J_loc[i]);
    const VecC b = (w * w) * gather(R, D.coeffs, t);
    const VecC c =
        mul(transfer(Family::RT, p + 1, Family::RT, p + 2, -1), gather(*ctx.rt1, theta_tilde.coeffs, t));
    const VecC Gloc = a + b + c - theta_hat[i];
    const auto d = R.element_dofs(t);
    for (std::size_t k = 0; k < d.size(); ++k)
      G.coeffs[d[k]] = Gloc[k];
    const MatX Cd = em(R.map(t), Family::P, p + 2, kVal, Family::RT, p + 2, kDer, one());
    div2 += mul(Cd, Gloc).squaredNorm();
    scale2 += mul(Cd, a).squaredNorm() + mul(Cd, b).squaredNorm() + mul(Cd, c).squaredNorm() +
              mul(Cd, theta_hat[i]).squaredNorm();
  }
  double trace = 0.0;
  for (int g = 0; g < R.num_dofs(); ++g)
    if (R.is_constrained(g)) {
      trace = std::max(trace, std::abs(G.coeffs[g]));
      G.coeffs[g] = 0.0;
    }
  const double gnorm = G.coeffs.cwiseAbs().maxCoeff();
  const double rel_div = scale2 > 0.0 ? std::sqrt(div2 / scale2) : 0.0;
  if (div_defect)
    *div_defect = rel_div;
  if (!(rel_div <= opts.feasibility_tol))
    throw Error(ErrorKind::EquilibrationFailure,
                "div G^a = " + sci(rel_div) + " (relative) at vertex " +
                    std::to_string(ctx.patch.center));
  if (gnorm > 0.0 && !(trace <= opts.residual_tol * gnorm))
    throw Error(ErrorKind::EquilibrationFailure,
                "G^a has a normal trace on the patch boundary at vertex " +
                    std::to_string(ctx.patch.center));
  return G;
}

PatchField magnetic_patch(const PatchContext &ctx, const CoefficientField &coeffs,
                          const PatchField &G, const EquilibrationOptions &opts,
                          PatchSolver *solver, double *curl_defect) {
  PatchSolver fallback(false);
  PatchSolver &S = solver ? *solver : fallback;
  SpMat Dfull;
  const ProblemData d = magnetic_data(ctx, coeffs, G, &Dfull);
  const Space &Q = *ctx.pq2;
  const std::vector<int> keep =
      all_but(Q.num_free(), ctx.patch.interior
                                ? std::vector<int>{Q.free_index(Q.cell_dof(0, 0))}
                                : std::vector<int>{});
  const int n = static_cast<int>(d.A.rows());
  const int m = static_cast<int>(d.C.rows());
  const int k = static_cast<int>(keep.size());
  auto lu = S.get<RealSparseLU>(ctx.signature + "|H", [&] {
    const SpMat Dk = select_rows(Dfull, keep);
    auto f = std::make_shared<RealSparseLU>();
    f->factorize(block_matrix(n + m + k, n + m + k,
                              {{0, 0, &d.A, false}, {0, n, &d.C, true}, {n, 0, &d.C, false},
                               {n, n + m, &Dk, true}, {n + m, n, &Dk, false}}));
    return std::shared_ptr<const RealSparseLU>(std::move(f));
  });
  VecC rhs = VecC::Zero(n + m + k);
  rhs.head(n) = d.f / (ctx.omega * ctx.omega);
  rhs.segment(n, m) = d.g;
  const VecC x = solve_complex(*lu, rhs).head(n);
  PatchField H{ctx.n2, extend_from_free(*ctx.n2, x)};

  // ‖iω curl H − G‖ / ‖G‖ with curl H represented exactly in RT_{p+2}.
  const Space &R = *ctx.rt2;
  const int q = ctx.p + 2;
  const MatX &Tc = transfer(Family::N, q, Family::RT, q, -1, kDer);
  VecC r = VecC::Zero(R.num_dofs());
  for (int t = 0; t < R.topo().num_tets(); ++t) {
    const VecC loc = (kI * ctx.omega) * mul(Tc, gather(*ctx.n2, H.coeffs, t));
    const auto dd = R.element_dofs(t);
    for (std::size_t i = 0; i < dd.size(); ++i)
      r[dd[i]] = loc[i];
  }
  r -= G.coeffs;
  const double gn = std::sqrt(rt_norm2(R, G.coeffs));
  const double rel = gn > 0.0 ? std::sqrt(rt_norm2(R, r)) / gn : std::sqrt(rt_norm2(R, r));
  if (curl_defect)
    *curl_defect = rel;
  if (!(rel <= opts.feasibility_tol))
    throw Error(ErrorKind::EquilibrationFailure,
                "magnetic curl constraint residual " + sci(rel) + " at vertex " +
                    std::to_string(ctx.patch.center));
  return H;
}

namespace {

// Local-to-global DOF map of a patch space onto the matching global space.
std::vector<int> patch_dof_map(const PatchContext &ctx, const Space &local, const Space &global) {
  EQMAX_REQUIRE(local.family() == global.family() && local.degree() == global.degree(),
                ErrorKind::InvalidArgument, "patch and global spaces differ");
  std::vector<int> map(local.num_dofs(), -1);
  for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
    const auto ld = local.element_dofs(static_cast<int>(i));
    const auto gd = global.element_dofs(ctx.patch.tets[i]);
    for (std::size_t k = 0; k < ld.size(); ++k) {
      if (map[ld[k]] >= 0 && map[ld[k]] != gd[k])
        throw Error(ErrorKind::Internal, "DOF orientation mismatch between patch and mesh");
      map[ld[k]] = gd[k];
    }
  }
  return map;
}

void add_mapped(const std::vector<int> &map, const VecC &local, VecC &global) {
  for (std::size_t l = 0; l < map.size(); ++l)
    if (map[l] >= 0)
      global[map[l]] += local[l];
}

template <class Work>
void parallel_for(int begin, int end, int threads, Work &&work) {
  threads = std::max(1, std::min(threads, end - begin));
  if (threads == 1) {
    for (int i = begin; i < end; ++i)
      work(i);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int k = 0; k < threads; ++k)
    pool.emplace_back([&] {
      for (int i = next++; i < end; i = next++) {
        try {
          work(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (auto &t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace

void accumulate_global(const PatchContext &ctx, const PatchField &local, DiscreteField &global) {
  add_mapped(patch_dof_map(ctx, *local.space, *global.space), local.coeffs, global.coeffs);
}

EquilibrationResult equilibrate(const PrimalSolution &sol, const CoefficientField &coeffs,
                                const EquilibrationOptions &opts) {
  const auto &topo = sol.topo;
  const int p = sol.p;
  const double w = sol.omega;
  const int nv = topo->num_vertices();
  EquilibrationResult res;
  res.D = DiscreteField(build_space(topo, Family::RT, p + 2));
  res.H = DiscreteField(build_space(topo, Family::N, p + 2));
  res.theta_tilde = DiscreteField(build_space(topo, Family::RT, p + 1));
  PatchSolver solver(opts.reuse_factorizations);
  constexpr int kBlock = 64;

  // Stage 1: displacement and θ̃ patches.
  struct Stage1 {
    VecC D, T;
    std::vector<int> mapD, mapT, tets;
    std::vector<double> piece_norm;
    double compat = 0.0, div2 = 0.0;
  };
  std::vector<double> piece_scale(topo->num_tets(), 0.0);
  std::vector<VecC> Dpatch(nv), Tpatch(nv);
  for (int b0 = 0; b0 < nv; b0 += kBlock) {
    const int b1 = std::min(nv, b0 + kBlock);
    std::vector<Stage1> out(b1 - b0);
    parallel_for(b0, b1, opts.threads, [&](int a) {
      const PatchContext ctx = make_patch_context(sol, a);
      Stage1 &s = out[a - b0];
      const PatchField D = displacement_patch(ctx, coeffs, opts, &solver, &s.compat);
      const PatchField T = theta_tilde_patch(ctx, coeffs, opts, &solver);
      for (int t = 0; t < ctx.rt2->topo().num_tets(); ++t) {
        const MatX Cd = em(ctx.rt2->map(t), Family::P, p + 2, kVal, Family::RT, p + 2, kDer, one());
        s.div2 += w * w * w * w * mul(Cd, gather(*ctx.rt2, D.coeffs, t)).squaredNorm() /
                  ctx.rt2->map(t).abs_det();
      }
      s.tets = ctx.patch.tets;
      for (int t = 0; t < ctx.rt1->topo().num_tets(); ++t)
        s.piece_norm.push_back(gather(*ctx.rt1, T.coeffs, t).norm());
      s.mapD = patch_dof_map(ctx, *ctx.rt2, *res.D.space);
      s.mapT = patch_dof_map(ctx, *ctx.rt1, *res.theta_tilde.space);
      s.D = D.coeffs;
      s.T = T.coeffs;
    });
    for (int a = b0; a < b1; ++a) {
      Stage1 &s = out[a - b0];
      add_mapped(s.mapD, s.D, res.D.coeffs);
      add_mapped(s.mapT, s.T, res.theta_tilde.coeffs);
      res.max_compatibility = std::max(res.max_compatibility, s.compat);
      for (std::size_t i = 0; i < s.tets.size(); ++i)
        piece_scale[s.tets[i]] += s.piece_norm[i];
      res.div_scale += s.div2;
      Dpatch[a] = std::move(s.D);
      Tpatch[a] = std::move(s.T);
    }
  }
  res.div_scale = std::sqrt(res.div_scale);

  // Stage 2: θ̂ per patch element, then G and H.
  const int nT = topo->num_tets();
  const int n2 = rb(Family::RT, p + 2).size();
  std::vector<VecC> hat_sum(nT, VecC::Zero(n2));
  struct Stage2 {
    VecC H;
    std::vector<int> mapH;
    std::vector<VecC> theta_hat;
    std::vector<int> tets;
    double flux = 0.0, divG = 0.0, curl = 0.0;
  };
  for (int b0 = 0; b0 < nv; b0 += kBlock) {
    const int b1 = std::min(nv, b0 + kBlock);
    std::vector<Stage2> out(b1 - b0);
    parallel_for(b0, b1, opts.threads, [&](int a) {
      const PatchContext ctx = make_patch_context(sol, a);
      Stage2 &s = out[a - b0];
      s.tets = ctx.patch.tets;
      for (std::size_t i = 0; i < ctx.patch.tets.size(); ++i) {
        const int t = ctx.patch.tets[i];
        ThetaHatInput in{ctx.rt2->map(static_cast<int>(i)), coeffs.mu(ctx.regions[i]),
                         ctx.hat.local_index[i], p, res.theta_tilde.local(t), piece_scale[t]};
        double flux = 0.0;
        s.theta_hat.push_back(theta_hat_element(in, opts, &solver, &flux));
        s.flux = std::max(s.flux, flux);
      }
      const PatchField D{ctx.rt2, Dpatch[a]};
      const PatchField T{ctx.rt1, Tpatch[a]};
      const PatchField G = current_variation_patch(ctx, D, T, s.theta_hat, opts, &s.divG);
      const PatchField H = magnetic_patch(ctx, coeffs, G, opts, &solver, &s.curl);
      s.mapH = patch_dof_map(ctx, *ctx.n2, *res.H.space);
      s.H = H.coeffs;
    });
    for (int a = b0; a < b1; ++a) {
      Stage2 &s = out[a - b0];
      add_mapped(s.mapH, s.H, res.H.coeffs);
      for (std::size_t i = 0; i < s.tets.size(); ++i)
        hat_sum[s.tets[i]] += s.theta_hat[i];
      res.max_flux_defect = std::max(res.max_flux_defect, s.flux);
      res.max_div_G = std::max(res.max_div_G, s.divG);
      res.max_curl_residual = std::max(res.max_curl_residual, s.curl);
    }
  }
  const MatX &Tth = transfer(Family::RT, p + 1, Family::RT, p + 2, -1);
  for (int t = 0; t < nT; ++t) {
    const VecC ref = mul(Tth, res.theta_tilde.local(t));
    const double rn = ref.norm();
    if (rn > 0.0)
      res.max_theta_hat_defect = std::max(res.max_theta_hat_defect, (hat_sum[t] - ref).norm() / rn);
  }
  res.factorizations = solver.factorizations();
  return res;
}

double face_jump(const DiscreteField &u) {
  const Space &S = *u.space;
  const Topology &T = S.topo();
  EQMAX_REQUIRE(S.family() != Family::P, ErrorKind::InvalidArgument,
                "face jumps need an RT or N field");
  static const std::array<Vec3, 6> bary{Vec3(0.6, 0.2, 0.2), Vec3(0.2, 0.6, 0.2),
                                        Vec3(0.2, 0.2, 0.6), Vec3(0.1, 0.45, 0.45),
                                        Vec3(0.45, 0.1, 0.45), Vec3(0.45, 0.45, 0.1)};
  double jump = 0.0, scale = 0.0;
  for (int f = 0; f < T.num_faces(); ++f) {
    const auto &ft = T.face_tets[f];
    if (ft[1] < 0)
      continue;
    const auto &fv = T.faces[f];
    const Vec3 &x0 = T.mesh.vertices[fv[0]];
    const Vec3 &x1 = T.mesh.vertices[fv[1]];
    const Vec3 &x2 = T.mesh.vertices[fv[2]];
    const Vec3 n = (x1 - x0).cross(x2 - x0).normalized();
    std::array<MatC, 2> vals;
    for (int s = 0; s < 2; ++s) {
      const GeomMap &m = S.map(ft[s]);
      std::vector<Vec3> pts;
      for (const auto &b : bary)
        pts.push_back(m.to_reference(b[0] * x0 + b[1] * x1 + b[2] * x2));
      vals[s] = eval_field(u, ft[s], pts).values;
    }
    for (int k = 0; k < 6; ++k) {
      const Vec3c d = vals[0].col(k) - vals[1].col(k);
      const double jn = S.family() == Family::RT ? std::abs(d.dot(n.cast<cplx>()))
                                                 : (d - n.cast<cplx>() * n.cast<cplx>().dot(d)).norm();
      jump = std::max(jump, jn);
      scale = std::max({scale, vals[0].col(k).norm(), vals[1].col(k).norm()});
    }
  }
  return scale > 0.0 ? jump / scale : jump;
}

double l2_norm(const DiscreteField &u) {
  const Space &S = *u.space;
  const auto &b = S.basis();
  const MatX W = MatX::Identity(b.value_dim(), b.value_dim());
  double s = 0.0;
  for (int t = 0; t < S.topo().num_tets(); ++t) {
    const VecC c = u.local(t);
    s += c.dot(mul(element_matrix(S.map(t), b, kVal, b, kVal, W), c)).real();
  }
  return std::sqrt(std::max(s, 0.0));
}

double l2_norm_div(const DiscreteField &u) {
  const Space &S = *u.space;
  EQMAX_REQUIRE(S.family() == Family::RT, ErrorKind::InvalidArgument,
                "divergence norm needs an RT field");
  const auto &b = S.basis();
  double s = 0.0;
  for (int t = 0; t < S.topo().num_tets(); ++t) {
    const VecC c = u.local(t);
    s += c.dot(mul(element_matrix(S.map(t), b, kDer, b, kDer, one()), c)).real();
  }
  return std::sqrt(std::max(s, 0.0));
}

ResidualReport verify_equilibration(const DiscreteField &D, const DiscreteField &H,
                                    const DiscreteField &J, double omega, double div_scale,
                                    bool scan_jumps) {
  const Space &SD = *D.space;
  const Space &SH = *H.space;
  const Space &SJ = *J.space;
  const int q = SD.degree();
  EQMAX_REQUIRE(SD.family() == Family::RT && SH.family() == Family::N &&
                    SJ.family() == Family::RT && SH.degree() == q && SJ.degree() <= q,
                ErrorKind::InvalidArgument, "verify_equilibration: unexpected spaces");
  EQMAX_REQUIRE(&SD.topo() == &SH.topo() && &SD.topo() == &SJ.topo(),
                ErrorKind::InvalidArgument, "fields live on different meshes");
  const MatX &Tc = transfer(Family::N, q, Family::RT, q, -1, kDer);
  const MatX &Tj = transfer(Family::RT, SJ.degree(), Family::RT, q, -1);
  const auto &b = SD.basis();
  const auto &bp = rb(Family::P, q);
  double num = 0.0, den = 0.0, dnum = 0.0, ddiv_D = 0.0, ddiv_J = 0.0;
  for (int t = 0; t < SD.topo().num_tets(); ++t) {
    const GeomMap &m = SD.map(t);
    const VecC Dl = D.local(t);
    const VecC Jl = mul(Tj, J.local(t));
    const VecC src = (kI * omega) * Jl + (omega * omega) * Dl;
    const VecC r = (kI * omega) * mul(Tc, H.local(t)) - src;
    const MatX M = element_matrix(m, b, kVal, b, kVal, eye3());
    num += r.dot(mul(M, r)).real();
    den += src.dot(mul(M, src)).real();
    const MatX Cd = element_matrix(m, bp, kVal, b, kDer, one());
    const double inv = 1.0 / m.abs_det();
    dnum += mul(Cd, (-omega * omega) * Dl - (kI * omega) * Jl).squaredNorm() * inv;
    ddiv_D += mul(Cd, (omega * omega) * Dl).squaredNorm() * inv;
    ddiv_J += mul(Cd, omega * Jl).squaredNorm() * inv;
  }
  ResidualReport rep;
  rep.curl_residual = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
  double scale = div_scale;
  if (!(scale > 0.0))
    scale = std::sqrt(ddiv_D) + std::sqrt(ddiv_J);
  rep.div_residual = scale > 0.0 ? std::sqrt(dnum) / scale : std::sqrt(dnum);
  if (scan_jumps) {
    rep.normal_jump = face_jump(D);
    rep.tangential_jump = face_jump(H);
  }
  return rep;
}

} // namespace eqmax
