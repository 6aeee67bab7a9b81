#include "support.hpp"

#include <doctest.h>

#include <numbers>

using namespace eqmax;
using namespace eqmax::testing;

namespace {

constexpr double kPi = std::numbers::pi;

// Composite Simpson rule on [0, 1].
template <class F> double simpson(F f, int n = 4000) {
  const double h = 1.0 / n;
  double s = f(0.0) + f(1.0);
  for (int i = 1; i < n; ++i)
    s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return s * h / 3.0;
}

} // namespace

TEST_CASE("manufactured solution parameters") {
  const ExactSolution s = manufactured_solution(3, 0.01);
  CHECK(s.omega == doctest::Approx(2.0 * kPi * 1.51).epsilon(1e-15));
  CHECK(s.k == doctest::Approx(std::sqrt(s.omega * s.omega - 9.0 * kPi * kPi)).epsilon(1e-15));
  CHECK_THROWS_AS(manufactured_solution(0, 0.1), Error);
  try {
    manufactured_solution(2, 0.0);
    FAIL("resonant frequency accepted");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::Resonance);
  }
  try {
    manufactured_solution(3, -0.6);
    FAIL("evanescent frequency accepted");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::InvalidArgument);
  }
}

TEST_CASE("manufactured solution satisfies the PDE and PEC condition") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto [m, delta] : {std::pair{1, 0.5}, std::pair{3, 0.01}, std::pair{3, 1e-4}, std::pair{2, 0.3}}) {
    const ExactSolution s = manufactured_solution(m, delta);
    double emax = 0.0;
    for (int i = 0; i < 200; ++i)
      emax = std::max(emax, s.E(Vec3(u(rng), u(rng), u(rng))).norm());
    const double scale = s.omega * s.omega * emax + s.omega;
    for (int i = 0; i < 200; ++i) {
      const Vec3 x(u(rng), u(rng), u(rng));
      CHECK(strong_residual(s, x).norm() <= 1e-8 * scale);
    }
    for (int face = 0; face < 6; ++face) {
      const int c = face / 2;
      const Vec3 n = Vec3::Unit(c);
      for (int i = 0; i < 50; ++i) {
        Vec3 x(u(rng), u(rng), u(rng));
        x[c] = face % 2;
        CHECK(s.E(x).cross(n.cast<cplx>()).norm() <= 1e-12 * emax);
      }
    }
  }
}

TEST_CASE("closed-form curl matches finite differences") {
  const ExactSolution s = manufactured_solution(3, 0.01);
  const double h = 1e-5;
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int i = 0; i < 20; ++i) {
    const Vec3 x(u(rng), u(rng), u(rng));
    Eigen::Matrix3cd J;
    for (int c = 0; c < 3; ++c) {
      const Vec3 e = h * Vec3::Unit(c);
      J.col(c) = (s.E(x + e) - s.E(x - e)) / (2.0 * h);
    }
    const Vec3c curl(J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1));
    CHECK((curl - s.curlE(x)).norm() <= 1e-6 * s.curlE(x).norm() + 1e-8);
  }
}

TEST_CASE("energy error of the zero field against a 1D oracle") {
  const ExactSolution s = manufactured_solution(1, 0.5);
  const double k = s.k, m = kPi;
  const double c = s.omega / (k * k);
  auto f = [&](double x) {
    return (std::cos(k * x) - 1.0) - (std::cos(k) - 1.0) * std::sin(k * x) / std::sin(k);
  };
  auto fp = [&](double x) {
    return -k * std::sin(k * x) - (std::cos(k) - 1.0) * k * std::cos(k * x) / std::sin(k);
  };
  const double F = simpson([&](double x) { return f(x) * f(x); });
  const double Fp = simpson([&](double x) { return fp(x) * fp(x); });
  const double mass = c * c * F * 0.5;
  const double curl = c * c * (m * m * F * 0.5 + Fp * 0.5);
  const double ref = std::sqrt(s.omega * s.omega * mass + curl);

  const auto topo = topology(generate_structured_cube(2));
  const DiscreteField zero(build_space(topo, Family::N, 1, Constraint::Boundary));
  const EnergyNorm e = energy_error(zero, s, CoefficientField{}, 20);
  CHECK(e.total == doctest::Approx(ref).epsilon(1e-8));
  double sum = 0.0;
  for (double v : e.per_element)
    sum += v * v;
  CHECK(std::sqrt(sum) == doctest::Approx(e.total).epsilon(1e-13));
}

TEST_CASE("energy error quadrature is converged at the default degree") {
  const auto topo = topology(generate_structured_cube(2));
  const ExactSolution s = manufactured_solution(3, 0.01);
  const PrimalSolution sol = solve_maxwell(topo, 1, s.omega, CoefficientField{}, s.J);
  const double d = energy_error(sol.E, s, CoefficientField{}).total;
  const double d4 = energy_error(sol.E, s, CoefficientField{}, 14).total;
  CHECK(rel_diff(d, d4) < 1e-6);
}

TEST_CASE("local estimators on hand-built fields") {
  const auto topo = topology(jittered_cube(2, 0.2, 9));
  std::mt19937 rng(2);
  CoefficientField coeffs;
  coeffs.epsilon_by_region[0] = Vec3(2.0, 1.0, 0.5).asDiagonal();
  const auto W = build_space(topo, Family::N, 1, Constraint::Boundary);
  const DiscreteField E = random_field(W, rng);
  const auto R2 = build_space(topo, Family::RT, 3);
  const auto N2 = build_space(topo, Family::N, 3);
  const DiscreteField H0(N2), D0(R2);
  const double w = 2.5;

  // A global linear field lies in N_1 and, scaled by constant ε, in RT_3.
  const auto Wf = build_space(topo, Family::N, 1);
  const Mat3 A = Mat3::Random();
  const Vec3 c0(0.3, -0.2, 0.1);
  const DiscreteField El = interpolate(Wf, [&](const Vec3 &x) -> Vec3c { return (A * x + c0).cast<cplx>(); }, 1);
  const DiscreteField D = interpolate(R2, [&](const Vec3 &x) -> Vec3c {
    return (coeffs.epsilon(0) * (A * x + c0)).cast<cplx>();
  }, 1);
  const Vec3 curl(A(2, 1) - A(1, 2), A(0, 2) - A(2, 0), A(1, 0) - A(0, 1));
  const LocalEstimators exact = local_estimators(El, D, H0, coeffs, w);
  const EnergyNorm enl = energy_norm(El, w, coeffs);
  for (int t = 0; t < topo->num_tets(); ++t) {
    CHECK(exact.eta_div[t] <= 1e-12 * enl.per_element[t]);
    CHECK(exact.eta_curl[t] ==
          doctest::Approx(curl.norm() * std::sqrt(Wf->map(t).abs_det() / 6.0)).epsilon(1e-12));
  }

  const LocalEstimators zero_d = local_estimators(E, D0, H0, coeffs, w);
  const LocalEstimators zero_d2 = local_estimators(E, D0, H0, coeffs, 2.0 * w);
  const EnergyNorm en = energy_norm(E, w, coeffs);
  const EnergyNorm en2 = energy_norm(E, 2.0 * w, coeffs);
  for (int t = 0; t < topo->num_tets(); ++t) {
    // With D = 0 and H = 0 the estimators are the two parts of the energy norm.
    const double sq = zero_d.eta_div[t] * zero_d.eta_div[t] + zero_d.eta_curl[t] * zero_d.eta_curl[t];
    CHECK(std::sqrt(sq) == doctest::Approx(en.per_element[t]).epsilon(1e-12));
    CHECK(zero_d2.eta_div[t] == doctest::Approx(2.0 * zero_d.eta_div[t]).epsilon(1e-13));
    CHECK(zero_d2.eta_curl[t] == doctest::Approx(zero_d.eta_curl[t]).epsilon(1e-13));
    const double sq2 = zero_d2.eta_div[t] * zero_d2.eta_div[t] + zero_d2.eta_curl[t] * zero_d2.eta_curl[t];
    CHECK(std::sqrt(sq2) == doctest::Approx(en2.per_element[t]).epsilon(1e-12));
  }
}

TEST_CASE("effectivity report aggregates squares") {
  LocalEstimators est{{3.0, 0.0, 1.0}, {4.0, 2.0, 0.0}};
  EnergyNorm err{{1.0, 2.0, 2.0}, 3.0};
  const EstimatorReport r = effectivity_report(est, err, ResidualReport{}, 10, 0.5);
  CHECK(r.eta_K[0] == doctest::Approx(5.0));
  CHECK(r.eta_div == doctest::Approx(std::sqrt(10.0)));
  CHECK(r.eta_curl == doctest::Approx(std::sqrt(20.0)));
  CHECK(r.eta == doctest::Approx(std::sqrt(30.0)));
  REQUIRE(r.effectivity.has_value());
  CHECK(*r.effectivity == doctest::Approx(std::sqrt(30.0) / 3.0));
  const EstimatorReport z = effectivity_report(est, EnergyNorm{{0, 0, 0}, 0.0}, ResidualReport{}, 10, 0.5);
  CHECK(!z.effectivity.has_value());
}
