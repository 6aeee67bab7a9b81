// Acceptance run: one PASS/FAIL line per criterion. Arguments select a subset
// of criteria by number; no arguments runs all seven.
#include "../support.hpp"

#include "eqmax/quadrature.hpp"
#include "eqmax/study.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace eqmax;
using namespace eqmax::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fix(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string &note) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!! ") + note);
  }
};

int failures = 0;
std::ofstream report_file;

void report(int id, const std::string &title, const Outcome &o, double secs) {
  std::ostringstream os;
  os << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " ("
     << fix(secs, 1) << " s)\n";
  for (const auto &n : o.notes)
    os << "    " << n << '\n';
  std::cout << os.str() << std::flush;
  report_file << os.str() << std::flush;
  failures += o.pass ? 0 : 1;
}

// --- 1 -------------------------------------------------------------------

Outcome criterion_identities() {
  Outcome o;
  for (auto [m, delta, p] : {std::tuple{1, 0.5, 1}, std::tuple{3, 0.01, 2}}) {
    const auto topo = topology(generate_structured_cube(2));
    const ExactSolution ex = manufactured_solution(m, delta);
    const PrimalSolution sol = solve_maxwell(topo, p, ex.omega, CoefficientField{}, ex.J);
    const EquilibrationResult eq = equilibrate(sol, CoefficientField{});
    const ResidualReport r = verify_equilibration(eq.D, eq.H, sol.J, sol.omega, eq.div_scale);
    const std::string tag = "m=" + std::to_string(m) + " delta=" + fix(delta, 2) +
                            " p=" + std::to_string(p) + ": ";
    o.require(r.curl_residual <= 1e-8, tag + "curl identity residual " + sci(r.curl_residual));
    o.require(r.div_residual <= 1e-8, tag + "div identity residual " + sci(r.div_residual));
    o.require(r.normal_jump <= 1e-9, tag + "normal jump of D " + sci(r.normal_jump));
    o.require(r.tangential_jump <= 1e-9, tag + "tangential jump of H " + sci(r.tangential_jump));
  }
  return o;
}

// --- 2 -------------------------------------------------------------------

Mat3 random_spd(std::mt19937 &rng) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  Mat3 A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      A(i, j) = u(rng);
  return A * A.transpose() + Vec3(1.0 + u(rng), 1.2 + u(rng), 0.8 + u(rng)).asDiagonal().toDenseMatrix();
}

struct Agreement {
  double solution = 0.0;
  double objective = 0.0;
};

Agreement compare(const KKTSystem &s, const VecC &production) {
  const OracleResult o = oracle_solve(s);
  Agreement a;
  a.solution = rel_diff(production, o.x);
  const double fo = s.objective(o.x), fp = s.objective(production);
  const double scale = std::max({std::abs(fo), std::abs(fp),
                                 std::abs(o.x.dot(s.A.cast<cplx>() * o.x).real())});
  a.objective = scale > 0.0 ? std::abs(fo - fp) / scale : 0.0;
  return a;
}

VecC free_part(const PatchField &u) { return restrict_to_free(*u.space, u.coeffs); }

Outcome criterion_oracle() {
  constexpr int kInstances = 20;
  Agreement worst[4];
  const char *names[4] = {"displacement", "theta-tilde", "theta-hat", "magnetic"};
  int interior = 0;
  for (int i = 0; i < kInstances; ++i) {
    std::mt19937 rng(1000 + i);
    CoefficientField coeffs;
    coeffs.epsilon_by_region[0] = random_spd(rng);
    coeffs.chi_by_region[0] = random_spd(rng);
    const auto topo = topology(jittered_cube(2, 0.25, 77 + i));
    const double omega = std::uniform_real_distribution<double>(2.0, 5.0)(rng);
    const PrimalSolution sol = random_primal(topo, 1, omega, coeffs, 500 + i);

    // Global θ̃_h from every patch, then one patch studied against the oracle.
    DiscreteField theta(build_space(topo, Family::RT, 2, Constraint::Boundary));
    for (int a = 0; a < topo->num_vertices(); ++a) {
      const PatchContext c = make_patch_context(sol, a);
      accumulate_global(c, theta_tilde_patch(c, coeffs), theta);
    }
    int a = 0;
    if (i % 2 == 0) {
      while (topo->vertex_on_boundary[a])
        ++a;
      ++interior;
    } else {
      std::vector<int> bnd;
      for (int v = 0; v < topo->num_vertices(); ++v)
        if (topo->vertex_on_boundary[v])
          bnd.push_back(v);
      a = bnd[std::uniform_int_distribution<int>(0, static_cast<int>(bnd.size()) - 1)(rng)];
    }
    const PatchContext ctx = make_patch_context(sol, a);
    auto keep = [&](int k, const Agreement &g) {
      worst[k].solution = std::max(worst[k].solution, g.solution);
      worst[k].objective = std::max(worst[k].objective, g.objective);
    };
    const PatchField D = displacement_patch(ctx, coeffs);
    keep(0, compare(displacement_system(ctx, coeffs), free_part(D)));
    const PatchField T = theta_tilde_patch(ctx, coeffs);
    keep(1, compare(theta_tilde_system(ctx, coeffs), free_part(T)));

    std::vector<VecC> hats;
    const int pick = std::uniform_int_distribution<int>(
        0, static_cast<int>(ctx.patch.tets.size()) - 1)(rng);
    for (std::size_t k = 0; k < ctx.patch.tets.size(); ++k) {
      const ThetaHatInput in{ctx.rt2->map(static_cast<int>(k)), coeffs.mu(0),
                             ctx.hat.local_index[k], 1, theta.local(ctx.patch.tets[k])};
      hats.push_back(theta_hat_element(in));
      if (static_cast<int>(k) == pick) {
        const KKTSystem s = theta_hat_system(in);
        keep(2, compare(s, hats.back().tail(s.num_vars())));
      }
    }
    const PatchField G = current_variation_patch(ctx, D, T, hats);
    const PatchField H = magnetic_patch(ctx, coeffs, G);
    keep(3, compare(magnetic_system(ctx, coeffs, G), free_part(H)));
  }
  Outcome o;
  for (int k = 0; k < 4; ++k) {
    o.require(worst[k].solution <= 1e-9 && worst[k].objective <= 1e-9,
              std::string(names[k]) + ": max solution diff " + sci(worst[k].solution) +
                  ", max objective diff " + sci(worst[k].objective));
  }
  o.notes.push_back(std::to_string(kInstances) + " instances per type, " +
                    std::to_string(interior) + " on interior vertices");
  return o;
}

// --- 3, 4 ----------------------------------------------------------------

struct Series {
  std::vector<ResultRow> rows;
  double seconds = 0.0;
};

Series run_series(int p, std::vector<int> n) {
  ExperimentConfig c;
  c.p = p;
  c.m = 3;
  c.delta = 0.01;
  c.structured_n = std::move(n);
  const auto t0 = Clock::now();
  std::ostringstream log;
  Series s;
  s.rows = run_convergence_study(c, &log);
  s.seconds = seconds_since(t0);
  std::cout << log.str();
  return s;
}

double finest_slope(const std::vector<ResultRow> &rows, double ResultRow::*field) {
  const ResultRow &a = rows[rows.size() - 2], &b = rows.back();
  return std::log(a.*field / b.*field) / std::log(a.h / b.h);
}

bool all_ok(const Series &s) {
  for (const auto &r : s.rows)
    if (r.failed)
      return false;
  return true;
}

const Series *g_p1 = nullptr;
const Series *g_p2 = nullptr;

Outcome criterion_rates(double &secs) {
  static const Series p1 = run_series(1, {2, 4, 8, 16});
  static const Series p2 = run_series(2, {2, 4, 8});
  g_p1 = &p1;
  g_p2 = &p2;
  secs = p1.seconds + p2.seconds;
  Outcome o;
  o.require(all_ok(p1) && all_ok(p2), "all meshes solved and equilibrated");
  if (!all_ok(p1) || !all_ok(p2))
    return o;
  const double e1 = finest_slope(p1.rows, &ResultRow::err);
  const double s1 = finest_slope(p1.rows, &ResultRow::est);
  const double e2 = finest_slope(p2.rows, &ResultRow::err);
  o.require(e1 >= 1.6 && e1 <= 2.4, "p=1 error slope on finest interval " + fix(e1));
  o.require(std::abs(s1 - e1) <= 0.3, "p=1 estimator slope " + fix(s1) + " (within 0.3)");
  o.require(e2 >= 2.5 && e2 <= 3.5, "p=2 error slope on finest interval " + fix(e2) +
                                        ", estimator slope " +
                                        fix(finest_slope(p2.rows, &ResultRow::est)));
  o.require(secs <= 1200.0, "total runtime " + fix(secs, 1) + " s (limit 1200)");
  return o;
}

Outcome criterion_effectivity() {
  Outcome o;
  if (!g_p1 || !all_ok(*g_p1) || !all_ok(*g_p2)) {
    o.require(false, "convergence series unavailable");
    return o;
  }
  for (const Series *s : {g_p1, g_p2}) {
    const int p = s == g_p1 ? 1 : 2;
    std::string effs;
    bool bounded = true;
    for (const auto &r : s->rows) {
      effs += (effs.empty() ? "" : ", ") + fix(r.eff);
      bounded = bounded && r.eff <= 1.1;
    }
    const auto &rows = s->rows;
    const std::size_t n = rows.size();
    const bool monotone = rows[n - 3].eff <= rows[n - 2].eff && rows[n - 2].eff <= rows[n - 1].eff;
    o.require(bounded, "p=" + std::to_string(p) + " effectivities " + effs + " (all <= 1.1)");
    o.require(monotone, "p=" + std::to_string(p) + " nondecreasing over the last two refinements");
  }
  const double fin = g_p1->rows.back().eff;
  o.require(fin >= 0.8 && fin <= 1.1, "p=1 finest effectivity " + fix(fin) + " in [0.8, 1.1]");
  return o;
}

// --- 5 -------------------------------------------------------------------

Outcome criterion_resonance() {
  ExperimentConfig c;
  c.p = 1;
  c.m = 3;
  c.structured_n = {2};
  double eff[3];
  const double deltas[3] = {1e-4, 1e-3, 1e-2};
  Outcome o;
  for (int i = 0; i < 3; ++i) {
    c.delta = deltas[i];
    const ResultRow r = run_convergence_study(c).front();
    eff[i] = r.failed ? std::numeric_limits<double>::quiet_NaN() : r.eff;
    o.notes.push_back("delta=" + sci(deltas[i]) + ": effectivity " + fix(eff[i], 6));
  }
  constexpr double slack = 0.05;
  o.require(eff[0] <= eff[1] + slack, "I(1e-4) <= I(1e-3) + 0.05");
  o.require(eff[1] <= eff[2] + slack, "I(1e-3) <= I(1e-2) + 0.05");
  return o;
}

// --- 6 -------------------------------------------------------------------

double partition_of_unity_defect(const Topology &topo) {
  const std::vector<Vec3> pts{Vec3(0.1, 0.2, 0.3), Vec3(0.25, 0.25, 0.25), Vec3(0.6, 0.1, 0.2)};
  std::vector<std::vector<double>> sum(topo.num_tets(), std::vector<double>(pts.size(), 0.0));
  std::vector<Vec3> grad(topo.num_tets(), Vec3::Zero());
  for (int a = 0; a < topo.num_vertices(); ++a) {
    const Patch p = build_vertex_patch(topo, a);
    const HatFunction h = hat_function(topo, p);
    for (std::size_t i = 0; i < p.tets.size(); ++i) {
      const int t = p.tets[i];
      grad[t] += h.grad[i];
      const GeomMap m = tet_map(topo, t);
      for (std::size_t k = 0; k < pts.size(); ++k)
        sum[t][k] += hat_value(topo, a, t, m.to_physical(pts[k]));
    }
  }
  double worst = 0.0;
  for (int t = 0; t < topo.num_tets(); ++t) {
    worst = std::max(worst, grad[t].norm() * std::cbrt(tet_map(topo, t).abs_det()));
    for (double s : sum[t])
      worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

double theta_tilde_divergence(const DiscreteField &T) {
  const auto &b = T.space->basis();
  const auto &pq = reference_basis(Family::P, b.degree());
  double worst = 0.0;
  for (int t = 0; t < T.space->topo().num_tets(); ++t) {
    const GeomMap &m = T.space->map(t);
    const VecC c = T.local(t);
    const MatX Md = element_matrix(m, pq, Quantity::Value, b, Quantity::Deriv, MatX::Identity(1, 1));
    const MatX Mv = element_matrix(m, b, Quantity::Value, b, Quantity::Value, MatX::Identity(3, 3));
    const double scale = std::sqrt(std::abs(c.dot(Mv.cast<cplx>() * c))) / std::cbrt(m.abs_det());
    if (scale > 0.0)
      worst = std::max(worst, (Md.cast<cplx>() * c).norm() / std::sqrt(m.abs_det()) / scale);
  }
  return worst;
}

double compatibility_by_quadrature(const PrimalSolution &sol, const CoefficientField &coeffs) {
  double worst = 0.0;
  const double w = sol.omega;
  const int deg = 2 * sol.p + 2;
  const auto &rule = tet_quadrature(deg);
  for (int a = 0; a < sol.topo->num_vertices(); ++a) {
    if (sol.topo->vertex_on_boundary[a])
      continue;
    const Patch patch = build_vertex_patch(*sol.topo, a);
    const HatFunction hat = hat_function(*sol.topo, patch);
    cplx integral = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < patch.tets.size(); ++i) {
      const int t = patch.tets[i];
      const FieldValues E = eval_field_rule(sol.E, t, deg);
      const FieldValues J = eval_field_rule(sol.J, t, deg);
      const Mat3c eps = coeffs.epsilon(sol.topo->mesh.region_of_tet[t]).cast<cplx>();
      for (int k = 0; k < rule.size(); ++k) {
        const cplx g =
            -hat.grad[i].cast<cplx>().dot(kI * w * J.values.col(k) + w * w * (eps * E.values.col(k)));
        integral += rule.weights[k] * sol.W->map(t).abs_det() * g;
        scale += rule.weights[k] * sol.W->map(t).abs_det() * std::abs(g);
      }
    }
    worst = std::max(worst, std::abs(integral) / scale);
  }
  return worst;
}

double galerkin_residual(const PrimalSolution &sol, const CoefficientField &coeffs) {
  const SpMatC A = assemble_maxwell(*sol.W, sol.omega, coeffs);
  const VecC rhs = assemble_load(*sol.W, sol.J, sol.omega);
  return (A * restrict_to_free(*sol.W, sol.E.coeffs) - rhs).norm() / rhs.norm();
}

double unisolvence_defect() {
  double worst = 0.0;
  for (int q = 0; q <= kMaxScalarDegree; ++q) {
    const MatX D = reference_basis(Family::P, q).dof_matrix();
    worst = std::max(worst, (D - MatX::Identity(D.rows(), D.cols())).cwiseAbs().maxCoeff());
  }
  for (Family f : {Family::N, Family::RT})
    for (int q = 0; q <= kMaxVectorDegree; ++q) {
      const ReferenceBasis &b = reference_basis(f, q);
      worst = std::max(worst, b.size() == family_dimension(f, q) ? 0.0 : 1.0);
      const MatX D = b.dof_matrix();
      worst = std::max(worst, (D - MatX::Identity(D.rows(), D.cols())).cwiseAbs().maxCoeff());
    }
  return worst;
}

double trace_jump(const std::shared_ptr<const Topology> &topo) {
  std::mt19937 rng(8);
  double worst = 0.0;
  for (Family f : {Family::N, Family::RT})
    for (int q = 0; q <= 4; ++q)
      worst = std::max(worst, face_jump(random_field(build_space(topo, f, q), rng)));
  return worst;
}

double quadrature_defect() {
  auto fact = [](int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i)
      f *= i;
    return f;
  };
  double worst = 0.0;
  for (int d = 0; d <= kMaxQuadratureDegree; ++d) {
    const QuadRule &r = tet_quadrature(d);
    for (int a = 0; a <= d; ++a)
      for (int b = 0; a + b <= d; ++b)
        for (int c = 0; a + b + c <= d; ++c) {
          double v = 0.0;
          for (int k = 0; k < r.size(); ++k)
            v += r.weights[k] * std::pow(r.points[k].x(), a) * std::pow(r.points[k].y(), b) *
                 std::pow(r.points[k].z(), c);
          const double exact = fact(a) * fact(b) * fact(c) / fact(a + b + c + 3);
          worst = std::max(worst, std::abs(v - exact) / exact);
        }
  }
  return worst;
}

// Physical curl/div of pushed-forward fields against finite differences of
// the pushed-forward values on a skewed element.
double piola_derivative_defect() {
  const GeomMap m = GeomMap::from_vertices(
      {Vec3(0.1, 0.0, 0.2), Vec3(1.3, 0.2, 0.1), Vec3(0.3, 1.1, -0.2), Vec3(0.2, 0.4, 0.9)});
  std::mt19937 rng(21);
  std::normal_distribution<double> nd;
  const double h = 1e-6;
  double worst = 0.0;
  for (Family f : {Family::N, Family::RT})
    for (int q = 0; q <= 4; ++q) {
      const ReferenceBasis &b = reference_basis(f, q);
      const VecX c = VecX::NullaryExpr(b.size(), [&] { return nd(rng); });
      auto value = [&](const Vec3 &x) {
        MatX v, d, pv, pd;
        b.eval(m.to_reference(x), v, d);
        push_forward(m, f, v, d, pv, pd);
        return std::pair<VecX, VecX>(pv * c, pd * c);
      };
      const Vec3 x = m.to_physical(Vec3(0.2, 0.3, 0.25));
      Mat3 J;
      for (int k = 0; k < 3; ++k)
        J.col(k) = (value(x + h * Vec3::Unit(k)).first - value(x - h * Vec3::Unit(k)).first) / (2 * h);
      const VecX an = value(x).second;
      VecX fd = f == Family::N ? VecX(Vec3(J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1)))
                               : VecX::Constant(1, J.trace());
      worst = std::max(worst, (an - fd).norm() / std::max(1.0, an.norm()));
    }
  return worst;
}

Outcome criterion_invariants() {
  Outcome o;
  CoefficientField coeffs;
  coeffs.epsilon_by_region[0] << 2.0, 0.2, 0.0, 0.2, 1.5, 0.1, 0.0, 0.1, 1.2;
  coeffs.chi_by_region[0] << 1.3, 0.0, 0.1, 0.0, 0.9, 0.0, 0.1, 0.0, 1.1;
  const auto topo = topology(jittered_cube(3, 0.2, 5));
  const ExactSolution ex = manufactured_solution(3, 0.01);

  o.require(partition_of_unity_defect(*topo) <= 1e-14,
            "partition of unity " + sci(partition_of_unity_defect(*topo)));
  double hat = 0.0, div = 0.0, compat = 0.0, galerkin = 0.0;
  for (auto [n, p] : {std::pair{3, 1}, std::pair{2, 2}}) {
    const auto mesh = n == 3 ? topo : topology(jittered_cube(n, 0.2, 6));
    const PrimalSolution sol = solve_maxwell(mesh, p, ex.omega, coeffs, ex.J);
    const EquilibrationResult eq = equilibrate(sol, coeffs);
    hat = std::max(hat, eq.max_theta_hat_defect);
    div = std::max(div, theta_tilde_divergence(eq.theta_tilde));
    compat = std::max(compat, compatibility_by_quadrature(sol, coeffs));
    galerkin = std::max(galerkin, galerkin_residual(sol, coeffs));
  }
  o.require(hat <= 1e-9, "sum of theta-hat pieces vs theta-tilde " + sci(hat));
  o.require(div <= 1e-9, "elementwise div of theta-tilde " + sci(div));
  o.require(compat <= 1e-9, "interior compatibility integrals " + sci(compat));
  o.require(galerkin <= 1e-9, "Galerkin orthogonality residual " + sci(galerkin));
  o.require(unisolvence_defect() <= 1e-10, "basis unisolvence " + sci(unisolvence_defect()));
  o.require(trace_jump(topo) <= 1e-10, "trace continuity " + sci(trace_jump(topo)));
  o.require(quadrature_defect() <= 1e-12, "quadrature exactness " + sci(quadrature_defect()));
  o.require(piola_derivative_defect() <= 1e-6,
            "Piola derivative consistency " + sci(piola_derivative_defect()));
  return o;
}

// --- 7 -------------------------------------------------------------------

Outcome criterion_manufactured() {
  Outcome o;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double pde = 0.0, pec = 0.0;
  for (auto [m, delta] : {std::pair{1, 0.5}, std::pair{3, 0.01}, std::pair{3, 1e-3}, std::pair{3, 1e-4}}) {
    const ExactSolution s = manufactured_solution(m, delta);
    double emax = 0.0;
    for (int i = 0; i < 500; ++i)
      emax = std::max(emax, s.E(Vec3(u(rng), u(rng), u(rng))).norm());
    const double scale = s.omega * s.omega * emax + s.omega;
    for (int i = 0; i < 500; ++i)
      pde = std::max(pde, strong_residual(s, Vec3(u(rng), u(rng), u(rng))).norm() / scale);
    for (int face = 0; face < 6; ++face)
      for (int i = 0; i < 100; ++i) {
        Vec3 x(u(rng), u(rng), u(rng));
        x[face / 2] = face % 2;
        pec = std::max(pec, s.E(x).cross(Vec3::Unit(face / 2).cast<cplx>()).norm() / emax);
      }
  }
  o.require(pde <= 1e-8, "strong PDE residual / scale " + sci(pde));
  o.require(pec <= 1e-12, "PEC tangential trace / max|E| " + sci(pec));
  return o;
}

} // namespace

int main(int argc, char **argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i)
    only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  report_file.open("acceptance_report.txt");
  auto run = [&](int id, const std::string &title, double limit, auto &&body) {
    if (!want(id))
      return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception &e) {
      o.require(false, std::string("error: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (limit > 0.0)
      o.require(secs <= limit, "runtime " + fix(secs, 1) + " s (limit " + fix(limit, 0) + ")");
    report(id, title, o, secs);
  };

  run(1, "equilibration identities", 120.0, criterion_identities);
  run(2, "oracle equivalence", 60.0, criterion_oracle);
  double study = 0.0;
  if (want(3) || want(4))
    run(3, "convergence rates", 0.0, [&] { return criterion_rates(study); });
  if (want(4))
    run(4, "effectivity trend", 0.0, criterion_effectivity);
  run(5, "resonance sensitivity", 0.0, criterion_resonance);
  run(6, "structural invariants", 120.0, criterion_invariants);
  run(7, "manufactured solution self-check", 0.0, criterion_manufactured);
  return failures == 0 ? 0 : 1;
}
