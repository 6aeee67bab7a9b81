#include "eqmax/study.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

namespace py = pybind11;
using namespace eqmax;

namespace {

using TopoPtr = std::shared_ptr<Topology>;

CoefficientField make_coeffs(const std::map<int, Mat3> &epsilon, const std::map<int, Mat3> &chi) {
  CoefficientField c;
  c.epsilon_by_region = epsilon;
  c.chi_by_region = chi;
  c.validate();
  return c;
}

struct PySolution {
  PrimalSolution sol;
  CoefficientField coeffs;
};

struct PyEquilibration {
  std::shared_ptr<PySolution> primal;
  EquilibrationResult result;
};

py::dict row_dict(const ResultRow &r) {
  py::dict d;
  d["h"] = r.h;
  d["ndof"] = r.ndof;
  d["err"] = r.err;
  d["est"] = r.est;
  d["eta_div"] = r.eta_div;
  d["eta_curl"] = r.eta_curl;
  d["eff"] = r.eff;
  d["curl_res"] = r.curl_res;
  d["div_res"] = r.div_res;
  d["time"] = r.time;
  d["failed"] = r.failed;
  d["failure"] = r.failure;
  return d;
}

ResultRow row_from(const py::dict &d) {
  ResultRow r;
  r.h = d["h"].cast<double>();
  r.err = d["err"].cast<double>();
  r.est = d["est"].cast<double>();
  r.failed = d.contains("failed") && d["failed"].cast<bool>();
  return r;
}

Vec3c call(const VectorFunction &f, const Vec3 &x) { return f(x); }

} // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the eqmax C++ core";

  // Messages start with the error kind, e.g. "resonance: ...".
  py::register_exception<Error>(m, "EqmaxError", PyExc_RuntimeError);

  py::class_<Topology, TopoPtr>(m, "Topology")
      .def_property_readonly("num_vertices", &Topology::num_vertices)
      .def_property_readonly("num_edges", &Topology::num_edges)
      .def_property_readonly("num_faces", &Topology::num_faces)
      .def_property_readonly("num_tets", &Topology::num_tets)
      .def_property_readonly("h", [](const Topology &t) { return mesh_stats(t.mesh).h; })
      .def_property_readonly("vertices", [](const Topology &t) {
        MatX v(t.num_vertices(), 3);
        for (int i = 0; i < t.num_vertices(); ++i)
          v.row(i) = t.mesh.vertices[i].transpose();
        return v;
      });

  m.def("structured_cube", [](int n) {
    return std::make_shared<Topology>(build_topology(generate_structured_cube(n)));
  }, py::arg("n"), "Kuhn-split unit cube with n cells per side.");
  m.def("load_gmsh", [](const std::string &path) {
    return std::make_shared<Topology>(build_topology(load_gmsh(path)));
  }, py::arg("path"), "Tetrahedral mesh from a Gmsh 2.2 ASCII file.");

  py::class_<ExactSolution>(m, "ExactSolution")
      .def_readonly("m", &ExactSolution::m)
      .def_readonly("delta", &ExactSolution::delta)
      .def_readonly("omega", &ExactSolution::omega)
      .def_readonly("k", &ExactSolution::k)
      .def("E", [](const ExactSolution &s, const Vec3 &x) { return call(s.E, x); })
      .def("curlE", [](const ExactSolution &s, const Vec3 &x) { return call(s.curlE, x); })
      .def("J", [](const ExactSolution &s, const Vec3 &x) { return call(s.J, x); })
      .def("strong_residual", &strong_residual);
  m.def("manufactured_solution", &manufactured_solution, py::arg("m"), py::arg("delta"));

  py::class_<PySolution, std::shared_ptr<PySolution>>(m, "PrimalSolution")
      .def_property_readonly("p", [](const PySolution &s) { return s.sol.p; })
      .def_property_readonly("omega", [](const PySolution &s) { return s.sol.omega; })
      .def_property_readonly("ndof", [](const PySolution &s) { return s.sol.ndof; })
      .def_property_readonly("residual", [](const PySolution &s) { return s.sol.residual; })
      .def_property_readonly("E", [](const PySolution &s) { return s.sol.E.coeffs; })
      .def_property_readonly("J", [](const PySolution &s) { return s.sol.J.coeffs; });

  m.def(
      "solve_maxwell",
      [](TopoPtr topo, int p, const ExactSolution &exact, const std::map<int, Mat3> &epsilon,
         const std::map<int, Mat3> &chi, double tol) {
        auto out = std::make_shared<PySolution>();
        out->coeffs = make_coeffs(epsilon, chi);
        MaxwellOptions opts;
        opts.tol = tol;
        {
          py::gil_scoped_release release;
          out->sol = solve_maxwell(std::const_pointer_cast<const Topology>(topo), p, exact.omega, out->coeffs, exact.J, opts);
        }
        return out;
      },
      py::arg("topology"), py::arg("p"), py::arg("exact"),
      py::arg("epsilon") = std::map<int, Mat3>{}, py::arg("chi") = std::map<int, Mat3>{},
      py::arg("tol") = 1e-10,
      "Nedelec solution driven by the RT interpolant of exact.J at exact.omega.");

  py::class_<PyEquilibration, std::shared_ptr<PyEquilibration>>(m, "Equilibration")
      .def_property_readonly("D", [](const PyEquilibration &e) { return e.result.D.coeffs; })
      .def_property_readonly("H", [](const PyEquilibration &e) { return e.result.H.coeffs; })
      .def_property_readonly("theta_tilde",
                             [](const PyEquilibration &e) { return e.result.theta_tilde.coeffs; })
      .def_property_readonly("div_scale", [](const PyEquilibration &e) { return e.result.div_scale; })
      .def_property_readonly("max_theta_hat_defect",
                             [](const PyEquilibration &e) { return e.result.max_theta_hat_defect; })
      .def_property_readonly("max_compatibility",
                             [](const PyEquilibration &e) { return e.result.max_compatibility; })
      .def_property_readonly("factorizations",
                             [](const PyEquilibration &e) { return e.result.factorizations; });

  m.def(
      "equilibrate",
      [](std::shared_ptr<PySolution> sol, int threads) {
        auto out = std::make_shared<PyEquilibration>();
        out->primal = sol;
        EquilibrationOptions opts;
        opts.threads = threads;
        py::gil_scoped_release release;
        out->result = equilibrate(sol->sol, sol->coeffs, opts);
        return out;
      },
      py::arg("solution"), py::arg("threads") = 1);

  m.def(
      "verify_equilibration",
      [](const PyEquilibration &e, bool scan_jumps) {
        const ResidualReport r =
            verify_equilibration(e.result.D, e.result.H, e.primal->sol.J, e.primal->sol.omega,
                                 e.result.div_scale, scan_jumps);
        py::dict d;
        d["curl_residual"] = r.curl_residual;
        d["div_residual"] = r.div_residual;
        d["normal_jump"] = r.normal_jump;
        d["tangential_jump"] = r.tangential_jump;
        return d;
      },
      py::arg("equilibration"), py::arg("scan_jumps") = true);

  m.def(
      "local_estimators",
      [](const PyEquilibration &e) {
        const auto &s = e.primal->sol;
        const LocalEstimators est =
            local_estimators(s.E, e.result.D, e.result.H, e.primal->coeffs, s.omega);
        return py::make_tuple(VecX(Eigen::Map<const VecX>(est.eta_div.data(), est.eta_div.size())),
                              VecX(Eigen::Map<const VecX>(est.eta_curl.data(), est.eta_curl.size())));
      },
      py::arg("equilibration"), "Per-element (eta_div, eta_curl).");

  m.def(
      "energy_error",
      [](const PySolution &s, const ExactSolution &exact, int quad_degree) {
        const EnergyNorm e = energy_error(s.sol.E, exact, s.coeffs, quad_degree);
        return py::make_tuple(e.total,
                              VecX(Eigen::Map<const VecX>(e.per_element.data(), e.per_element.size())));
      },
      py::arg("solution"), py::arg("exact"), py::arg("quad_degree") = -1,
      "(total, per_element) energy-norm error against the analytic field.");

  m.def(
      "solve_constrained_ls",
      [](const MatX &A, const VecC &f, const MatX &C, const VecC &g) {
        const KKTSolution s = solve_constrained_ls(KKTSystem{A, f, C, g});
        return py::make_tuple(s.x, s.constraint_rank);
      },
      py::arg("A"), py::arg("f"), py::arg("C"), py::arg("g"),
      "Minimize x^H A x - 2 Re(x^H f) subject to C x = g; returns (x, rank of C).");

  m.def(
      "run_study",
      [](const std::string &config_json) {
        const ExperimentConfig c = config_from_json(config_json);
        std::vector<ResultRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_convergence_study(c);
        }
        py::list out;
        for (const auto &r : rows)
          out.append(row_dict(r));
        return out;
      },
      py::arg("config_json"), "Convergence study from a JSON configuration; one dict per mesh.");

  m.def(
      "compute_rates",
      [](const std::vector<py::dict> &rows) {
        std::vector<ResultRow> rr;
        for (const auto &d : rows)
          rr.push_back(row_from(d));
        const RateSummary s = compute_rates(rr);
        py::dict d;
        d["err"] = s.err;
        d["est"] = s.est;
        return d;
      },
      py::arg("rows"));
}
