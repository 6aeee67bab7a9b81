#include "eqmax/basis.hpp"

#include <Eigen/LU>
#include <Eigen/QR>

#include <cmath>
#include <tuple>

namespace eqmax {

const char *to_string(Family f) {
  switch (f) {
  case Family::P: return "P";
  case Family::N: return "N";
  case Family::RT: return "RT";
  }
  return "?";
}

int family_dimension(Family f, int q) {
  switch (f) {
  case Family::P: return (q + 1) * (q + 2) * (q + 3) / 6;
  case Family::N: return (q + 1) * (q + 3) * (q + 4) / 2;
  case Family::RT: return (q + 1) * (q + 2) * (q + 4) / 2;
  }
  return 0;
}

Monomials::Monomials(int max_degree, const Vec3 &origin)
    : max_degree_(max_degree), origin_(origin) {
  for (int d = 0; d <= max_degree; ++d)
    for (int a = d; a >= 0; --a)
      for (int b = d - a; b >= 0; --b)
        exps_.push_back({a, b, d - a - b});
}

int Monomials::index(int a, int b, int c) const {
  for (int i = 0; i < size(); ++i)
    if (exps_[i][0] == a && exps_[i][1] == b && exps_[i][2] == c)
      return i;
  return -1;
}

void Monomials::eval(const Vec3 &x, VecX &values, MatX *grads) const {
  const int D = max_degree_;
  double pw[3][16];
  for (int d = 0; d < 3; ++d) {
    pw[d][0] = 1.0;
    for (int k = 1; k <= D; ++k)
      pw[d][k] = pw[d][k - 1] * (x[d] - origin_[d]);
  }
  values.resize(size());
  if (grads)
    grads->resize(3, size());
  for (int i = 0; i < size(); ++i) {
    const auto &e = exps_[i];
    values[i] = pw[0][e[0]] * pw[1][e[1]] * pw[2][e[2]];
    if (grads) {
      (*grads)(0, i) = e[0] ? e[0] * pw[0][e[0] - 1] * pw[1][e[1]] * pw[2][e[2]] : 0.0;
      (*grads)(1, i) = e[1] ? e[1] * pw[0][e[0]] * pw[1][e[1] - 1] * pw[2][e[2]] : 0.0;
      (*grads)(2, i) = e[2] ? e[2] * pw[0][e[0]] * pw[1][e[1]] * pw[2][e[2] - 1] : 0.0;
    }
  }
}

double legendre01(int k, double t) {
  const double x = 2.0 * t - 1.0;
  double p0 = 1.0, p1 = x;
  if (k == 0)
    return p0;
  for (int n = 1; n < k; ++n) {
    const double p2 = ((2.0 * n + 1.0) * x * p1 - n * p0) / (n + 1.0);
    p0 = p1;
    p1 = p2;
  }
  return p1;
}

namespace {

const std::array<Vec3, 4> kRefVertices{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                                       Vec3(0, 0, 1)};

constexpr std::array<std::array<int, 2>, 6> kEdges{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
constexpr std::array<std::array<int, 3>, 4> kFaces{{{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}}};

// Evaluates coefficient-matrix fields (nmono × vdim each) at x.
MatX eval_fields(const Monomials &monos, const std::vector<MatX> &fields, const Vec3 &x) {
  VecX mv;
  monos.eval(x, mv);
  const int vdim = static_cast<int>(fields.front().cols());
  MatX out(vdim, fields.size());
  for (std::size_t j = 0; j < fields.size(); ++j)
    out.col(j) = fields[j].transpose() * mv;
  return out;
}

// Coefficients T with V·T orthonormal columns (two QR passes); V holds
// quadrature-weighted values, one column per function.
MatX orthonormalizer(MatX V) {
  const int n = static_cast<int>(V.cols());
  MatX T = MatX::Identity(n, n);
  for (int pass = 0; pass < 2; ++pass) {
    Eigen::HouseholderQR<MatX> hqr(V);
    const MatX R = hqr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    EQMAX_REQUIRE(R.diagonal().cwiseAbs().minCoeff() > 0.0, ErrorKind::Internal,
                  "spanning set is numerically dependent");
    const MatX Rinv = R.triangularView<Eigen::Upper>().solve(MatX::Identity(n, n));
    V = V * Rinv;
    T = T * Rinv;
  }
  return T;
}

// L2-orthonormal test polynomials of degree <= k on the reference tet, or on
// the reference triangle (z = 0) when planar.
class TestPolynomials {
public:
  TestPolynomials(int k, bool planar)
      : monos_(k, planar ? Vec3(1.0 / 3.0, 1.0 / 3.0, 0.0) : Vec3::Constant(0.25)) {
    for (int i = 0; i < monos_.size(); ++i)
      if (!planar || monos_.exponent(i)[2] == 0)
        cols_.push_back(i);
    const QuadRule &rule = planar ? triangle_quadrature(2 * k) : tet_quadrature(2 * k);
    MatX V(rule.size(), cols_.size());
    for (int s = 0; s < rule.size(); ++s)
      V.row(s) = std::sqrt(rule.weights[s]) * raw(rule.points[s]).transpose();
    T_ = orthonormalizer(std::move(V));
  }
  int size() const { return static_cast<int>(cols_.size()); }
  VecX eval(const Vec3 &x) const { return T_.transpose() * raw(x); }

private:
  VecX raw(const Vec3 &x) const {
    VecX mv, out(cols_.size());
    monos_.eval(x, mv);
    for (std::size_t j = 0; j < cols_.size(); ++j)
      out[j] = mv[cols_[j]];
    return out;
  }
  Monomials monos_;
  std::vector<int> cols_;
  MatX T_;
};

} // namespace

ReferenceBasis::ReferenceBasis(Family family, int degree)
    : family_(family), degree_(degree),
      monos_(family == Family::P ? degree : degree + 1) {
  const int q = degree;
  if (family == Family::P) {
    EQMAX_REQUIRE(q >= 0 && q <= kMaxScalarDegree, ErrorKind::UnsupportedDegree,
                  "P_" + std::to_string(q) + " not supported");
    per_cell_ = family_dimension(family, q);
  } else {
    EQMAX_REQUIRE(q >= 0 && q <= kMaxVectorDegree, ErrorKind::UnsupportedDegree,
                  std::string(to_string(family)) + "_" + std::to_string(q) + " not supported");
    if (family == Family::N) {
      per_edge_ = q + 1;
      per_face_ = q * (q + 1);
      per_cell_ = (q - 1) * q * (q + 1) / 2;
    } else {
      per_face_ = (q + 1) * (q + 2) / 2;
      per_cell_ = q * (q + 1) * (q + 2) / 2;
    }
  }
  size_ = family_dimension(family, q);

  // Independent subset of the spanning set, chosen on the exact monomial
  // coefficients, then orthonormalized in L2(reference tet).
  auto span = spanning_set();
  const int vdim = value_dim();
  MatX coef(monos_.size() * vdim, span.size());
  for (std::size_t j = 0; j < span.size(); ++j)
    coef.col(j) = span[j].reshaped();
  Eigen::ColPivHouseholderQR<MatX> qr(coef);
  qr.setThreshold(1e-10);
  EQMAX_REQUIRE(qr.rank() == size_, ErrorKind::Internal,
                "spanning set of " + std::string(to_string(family)) + "_" + std::to_string(q) +
                    " has rank " + std::to_string(qr.rank()) + ", expected " +
                    std::to_string(size_));
  std::vector<MatX> indep;
  for (int k = 0; k < size_; ++k)
    indep.push_back(span[qr.colsPermutation().indices()(k)]);

  const QuadRule &rule = tet_quadrature(2 * value_degree());
  MatX V(rule.size() * vdim, size_);
  for (int k = 0; k < rule.size(); ++k)
    V.middleRows(k * vdim, vdim) =
        std::sqrt(rule.weights[k]) * eval_fields(monos_, indep, rule.points[k]);
  const MatX T = orthonormalizer(std::move(V));
  std::vector<MatX> ortho;
  for (int k = 0; k < size_; ++k) {
    MatX c = MatX::Zero(monos_.size(), vdim);
    for (int j = 0; j < size_; ++j)
      c += T(j, k) * indep[j];
    ortho.push_back(c);
  }

  if (family == Family::P) {
    coeffs_ = std::move(ortho);
    return;
  }

  // Dual basis: coefficients = ortho · M^{-1} with M_ij = dof_i(ortho_j).
  const auto funcs = dof_functionals(value_degree());
  MatX M = MatX::Zero(size_, size_);
  for (int i = 0; i < size_; ++i) {
    const auto &fn = funcs[i];
    for (std::size_t k = 0; k < fn.points.size(); ++k) {
      const MatX v = eval_fields(monos_, ortho, fn.points[k]);
      M.row(i) += fn.weights[k].transpose() * v;
    }
  }
  Eigen::FullPivLU<MatX> lu(M);
  EQMAX_REQUIRE(lu.rank() == size_, ErrorKind::Internal, "DOF matrix is singular");
  const MatX Minv = lu.inverse();
  coeffs_.assign(size_, MatX::Zero(monos_.size(), vdim));
  for (int k = 0; k < size_; ++k)
    for (int j = 0; j < size_; ++j)
      coeffs_[k] += Minv(j, k) * ortho[j];
}

std::vector<MatX> ReferenceBasis::spanning_set() const {
  const int q = degree_;
  std::vector<MatX> span;
  const int nm = monos_.size();
  if (family_ == Family::P) {
    for (int i = 0; i < nm; ++i) {
      MatX c = MatX::Zero(nm, 1);
      c(i, 0) = 1.0;
      span.push_back(c);
    }
    return span;
  }
  for (int i = 0; i < nm; ++i) {
    const auto &e = monos_.exponent(i);
    if (e[0] + e[1] + e[2] > q)
      continue;
    for (int c = 0; c < 3; ++c) {
      MatX m = MatX::Zero(nm, 3);
      m(i, c) = 1.0;
      span.push_back(m);
    }
  }
  for (int i = 0; i < nm; ++i) {
    const auto &e = monos_.exponent(i);
    if (e[0] + e[1] + e[2] != q)
      continue;
    const int ix = monos_.index(e[0] + 1, e[1], e[2]);
    const int iy = monos_.index(e[0], e[1] + 1, e[2]);
    const int iz = monos_.index(e[0], e[1], e[2] + 1);
    if (family_ == Family::RT) {
      MatX m = MatX::Zero(nm, 3);
      m(ix, 0) = 1.0;
      m(iy, 1) = 1.0;
      m(iz, 2) = 1.0;
      span.push_back(m);
    } else {
      // x × (m e_c)
      MatX m0 = MatX::Zero(nm, 3), m1 = MatX::Zero(nm, 3), m2 = MatX::Zero(nm, 3);
      m0(iz, 1) = 1.0;
      m0(iy, 2) = -1.0;
      m1(iz, 0) = -1.0;
      m1(ix, 2) = 1.0;
      m2(iy, 0) = 1.0;
      m2(ix, 1) = -1.0;
      span.push_back(m0);
      span.push_back(m1);
      span.push_back(m2);
    }
  }
  return span;
}

int ReferenceBasis::value_degree() const {
  return family_ == Family::P ? degree_ : degree_ + 1;
}

int ReferenceBasis::deriv_degree() const {
  return family_ == Family::P ? std::max(degree_ - 1, 0) : degree_;
}

void ReferenceBasis::eval(const Vec3 &x, MatX &values, MatX &derivs) const {
  VecX mv;
  MatX grads;
  monos_.eval(x, mv, &grads);
  const int vdim = value_dim();
  values.resize(vdim, size_);
  derivs.resize(deriv_dim(), size_);
  if (family_ == Family::P) {
    for (int j = 0; j < size_; ++j) {
      values(0, j) = coeffs_[j].col(0).dot(mv);
      derivs.col(j) = grads * coeffs_[j].col(0);
    }
    return;
  }
  for (int j = 0; j < size_; ++j) {
    const MatX &c = coeffs_[j];
    values.col(j) = c.transpose() * mv;
    const Mat3 D = grads * c; // D(d, comp) = ∂_d v_comp
    if (family_ == Family::N)
      derivs.col(j) = Vec3(D(1, 2) - D(2, 1), D(2, 0) - D(0, 2), D(0, 1) - D(1, 0));
    else
      derivs(0, j) = D(0, 0) + D(1, 1) + D(2, 2);
  }
}

Tabulation ReferenceBasis::tabulate(const std::vector<Vec3> &points) const {
  Tabulation tab;
  tab.value_dim = value_dim();
  tab.deriv_dim = deriv_dim();
  tab.values.resize(points.size());
  tab.derivs.resize(points.size());
  for (std::size_t k = 0; k < points.size(); ++k)
    eval(points[k], tab.values[k], tab.derivs[k]);
  return tab;
}

const Tabulation &ReferenceBasis::tabulate_rule(int quad_degree) const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto &slot = tab_cache_[quad_degree];
  if (!slot)
    slot = std::make_unique<Tabulation>(tabulate(tet_quadrature(quad_degree).points));
  return *slot;
}

std::vector<DofFunctional> ReferenceBasis::dof_functionals(int field_degree) const {
  const int q = degree_;
  std::vector<DofFunctional> out;
  if (family_ == Family::P) {
    const QuadRule &rule = tet_quadrature(field_degree + q);
    for (int i = 0; i < size_; ++i) {
      DofFunctional fn;
      for (int k = 0; k < rule.size(); ++k) {
        VecX mv;
        monos_.eval(rule.points[k], mv);
        fn.points.push_back(rule.points[k]);
        fn.weights.emplace_back(rule.weights[k] * coeffs_[i].col(0).dot(mv), 0.0, 0.0);
      }
      out.push_back(std::move(fn));
    }
    return out;
  }

  if (family_ == Family::N) {
    const QuadRule &line = line_quadrature(field_degree + q);
    for (const auto &e : kEdges) {
      const Vec3 a = kRefVertices[e[0]];
      const Vec3 t = kRefVertices[e[1]] - a;
      for (int k = 0; k <= q; ++k) {
        DofFunctional fn;
        for (int s = 0; s < line.size(); ++s) {
          const double tau = line.points[s].x();
          fn.points.push_back(a + tau * t);
          fn.weights.push_back(line.weights[s] * legendre01(k, tau) * t);
        }
        out.push_back(std::move(fn));
      }
    }
  }

  // Face moments in the face parametrization x = v_i + s (v_j - v_i) + t (v_k - v_i).
  const int face_test_degree = family_ == Family::N ? q - 1 : q;
  if (face_test_degree >= 0) {
    const QuadRule &tri = triangle_quadrature(field_degree + face_test_degree);
    const TestPolynomials tests(face_test_degree, true);
    std::vector<VecX> tv;
    for (int s = 0; s < tri.size(); ++s)
      tv.push_back(tests.eval(tri.points[s]));
    for (const auto &f : kFaces) {
      const Vec3 a = kRefVertices[f[0]];
      const Vec3 t1 = kRefVertices[f[1]] - a;
      const Vec3 t2 = kRefVertices[f[2]] - a;
      const Vec3 nrm = t1.cross(t2);
      for (int i = 0; i < tests.size(); ++i) {
          const int ncomp = family_ == Family::N ? 2 : 1;
          for (int c = 0; c < ncomp; ++c) {
            const Vec3 dir = family_ == Family::RT ? nrm : (c == 0 ? t1 : t2);
            DofFunctional fn;
            for (int s = 0; s < tri.size(); ++s) {
              const double u = tri.points[s].x(), v = tri.points[s].y();
              fn.points.push_back(a + u * t1 + v * t2);
              fn.weights.push_back(tri.weights[s] * tv[s][i] * dir);
            }
            out.push_back(std::move(fn));
          }
        }
    }
  }

  const int cell_test_degree = family_ == Family::N ? q - 2 : q - 1;
  if (cell_test_degree >= 0) {
    const TestPolynomials tests(cell_test_degree, false);
    const QuadRule &rule = tet_quadrature(field_degree + cell_test_degree);
    std::vector<VecX> tv;
    for (int s = 0; s < rule.size(); ++s)
      tv.push_back(tests.eval(rule.points[s]));
    for (int m = 0; m < tests.size(); ++m)
      for (int c = 0; c < 3; ++c) {
        DofFunctional fn;
        for (int s = 0; s < rule.size(); ++s) {
          fn.points.push_back(rule.points[s]);
          fn.weights.push_back(rule.weights[s] * tv[s][m] * Vec3::Unit(c));
        }
        out.push_back(std::move(fn));
      }
  }
  return out;
}

VecC ReferenceBasis::apply_dofs(const std::function<Vec3c(const Vec3 &)> &f,
                                int field_degree) const {
  const auto funcs = dof_functionals(field_degree);
  VecC out(funcs.size());
  for (std::size_t i = 0; i < funcs.size(); ++i) {
    cplx acc = 0.0;
    for (std::size_t k = 0; k < funcs[i].points.size(); ++k) {
      const Vec3c v = f(funcs[i].points[k]);
      acc += funcs[i].weights[k].cast<cplx>().dot(v);
    }
    out[i] = acc;
  }
  return out;
}

MatX ReferenceBasis::dof_matrix() const {
  const auto funcs = dof_functionals(value_degree());
  MatX M = MatX::Zero(size_, size_);
  MatX v, d;
  for (int i = 0; i < size_; ++i)
    for (std::size_t k = 0; k < funcs[i].points.size(); ++k) {
      eval(funcs[i].points[k], v, d);
      if (family_ == Family::P)
        M.row(i) += funcs[i].weights[k].x() * v.row(0);
      else
        M.row(i) += funcs[i].weights[k].transpose() * v;
    }
  return M;
}

const ReferenceBasis &reference_basis(Family family, int degree) {
  const int maxq = family == Family::P ? kMaxScalarDegree : kMaxVectorDegree;
  EQMAX_REQUIRE(degree >= 0 && degree <= maxq, ErrorKind::UnsupportedDegree,
                std::string(to_string(family)) + "_" + std::to_string(degree) + " not supported");
  static std::mutex mutex;
  static std::map<std::pair<int, int>, std::unique_ptr<ReferenceBasis>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto &slot = cache[{static_cast<int>(family), degree}];
  if (!slot)
    slot = std::make_unique<ReferenceBasis>(family, degree);
  return *slot;
}

Tabulation eval_scalar_basis(int q, const std::vector<Vec3> &points) {
  return reference_basis(Family::P, q).tabulate(points);
}

Tabulation eval_nedelec_basis(int q, const std::vector<Vec3> &points) {
  return reference_basis(Family::N, q).tabulate(points);
}

Tabulation eval_rt_basis(int q, const std::vector<Vec3> &points) {
  return reference_basis(Family::RT, q).tabulate(points);
}

const std::vector<MatX> &reference_pairing(const ReferenceBasis &A, Quantity qa,
                                           const ReferenceBasis &B, Quantity qb) {
  using Key = std::tuple<int, int, int, int, int, int>;
  static std::mutex mutex;
  static std::map<Key, std::unique_ptr<std::vector<MatX>>> cache;
  const Key key{static_cast<int>(A.family()), A.degree(), static_cast<int>(qa),
                static_cast<int>(B.family()), B.degree(), static_cast<int>(qb)};
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end())
      return *it->second;
  }
  const int da = qa == Quantity::Value ? A.value_degree() : A.deriv_degree();
  const int db = qb == Quantity::Value ? B.value_degree() : B.deriv_degree();
  const int dimA = qa == Quantity::Value ? A.value_dim() : A.deriv_dim();
  const int dimB = qb == Quantity::Value ? B.value_dim() : B.deriv_dim();
  const QuadRule &rule = tet_quadrature(da + db);
  const Tabulation &ta = A.tabulate_rule(da + db);
  const Tabulation &tb = B.tabulate_rule(da + db);
  auto out = std::make_unique<std::vector<MatX>>(dimA * dimB, MatX::Zero(A.size(), B.size()));
  for (int k = 0; k < rule.size(); ++k) {
    const MatX &va = qa == Quantity::Value ? ta.values[k] : ta.derivs[k];
    const MatX &vb = qb == Quantity::Value ? tb.values[k] : tb.derivs[k];
    for (int a = 0; a < dimA; ++a)
      for (int b = 0; b < dimB; ++b)
        (*out)[a * dimB + b].noalias() += rule.weights[k] * va.row(a).transpose() * vb.row(b);
  }
  std::lock_guard<std::mutex> lock(mutex);
  auto &slot = cache[key];
  if (!slot)
    slot = std::move(out);
  return *slot;
}

const MatX &reference_transfer(const ReferenceBasis &from, const ReferenceBasis &to, int lambda,
                               Quantity quantity) {
  using Key = std::tuple<int, int, int, int, int, int>;
  static std::mutex mutex;
  static std::map<Key, std::unique_ptr<MatX>> cache;
  const Key key{static_cast<int>(from.family()), from.degree(), static_cast<int>(to.family()),
                to.degree(), lambda, static_cast<int>(quantity)};
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end())
      return *it->second;
  }
  const bool value = quantity == Quantity::Value;
  const int field_degree =
      (value ? from.value_degree() : from.deriv_degree()) + (lambda >= 0 ? 1 : 0);
  const auto funcs = to.dof_functionals(field_degree);
  auto out = std::make_unique<MatX>(MatX::Zero(to.size(), from.size()));
  MatX v, d;
  for (int i = 0; i < to.size(); ++i)
    for (std::size_t k = 0; k < funcs[i].points.size(); ++k) {
      const Vec3 &x = funcs[i].points[k];
      from.eval(x, v, d);
      if (!value)
        v.swap(d);
      const double fac = lambda < 0 ? 1.0 : (lambda == 0 ? 1.0 - x.sum() : x[lambda - 1]);
      if (to.family() == Family::P)
        out->row(i) += fac * funcs[i].weights[k].x() * v.row(0);
      else
        out->row(i) += fac * funcs[i].weights[k].transpose() * v;
    }
  std::lock_guard<std::mutex> lock(mutex);
  auto &slot = cache[key];
  if (!slot)
    slot = std::move(out);
  return *slot;
}

} // namespace eqmax
