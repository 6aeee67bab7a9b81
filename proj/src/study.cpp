#include "eqmax/study.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

namespace eqmax {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<int> parse_int_list(const std::string &s, const std::string &what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t pos = 0;
    int v = 0;
    try {
      v = std::stoi(item, &pos);
    } catch (const std::exception &) {
      pos = 0;
    }
    if (pos == 0 || pos != item.size())
      throw Error(ErrorKind::Parse, what + ": '" + item + "' is not an integer");
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> split(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(item);
  return out;
}

void parse_mesh_spec(const std::string &spec, ExperimentConfig &c) {
  const auto eq = spec.find('=');
  const std::string key = spec.substr(0, eq);
  if (eq == std::string::npos || (key != "n" && key != "files"))
    throw Error(ErrorKind::Parse, "--mesh expects n=<list> or files=<list>, got '" + spec + "'");
  c.structured_n.clear();
  c.mesh_files.clear();
  if (key == "n")
    c.structured_n = parse_int_list(spec.substr(eq + 1), "--mesh");
  else
    c.mesh_files = split(spec.substr(eq + 1));
}

Mat3 diagonal_tensor(const json &j, const std::string &where) {
  if (!j.is_array() || j.size() != 3)
    throw Error(ErrorKind::Parse, where + " must be an array of three diagonal entries");
  Mat3 A = Mat3::Zero();
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number())
      throw Error(ErrorKind::Parse, where + " entries must be numbers");
    A(i, i) = j[i].get<double>();
  }
  return A;
}

void read_tensors(const json &j, const std::string &name, std::map<int, Mat3> &out) {
  if (!j.is_object())
    throw Error(ErrorKind::Parse, "coefficients." + name + " must map region tags to tensors");
  for (const auto &[tag, value] : j.items()) {
    const std::string where = "coefficients." + name + "." + tag;
    const int region = parse_int_list(tag, where).at(0);
    out[region] = diagonal_tensor(value, where);
  }
}

template <class T> T get_field(const json &j, const char *name) {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception &) {
    throw Error(ErrorKind::Parse, std::string("field '") + name + "' has the wrong type");
  }
}

void apply_json(const json &j, ExperimentConfig &c) {
  if (!j.is_object())
    throw Error(ErrorKind::Parse, "configuration must be a JSON object");
  static const std::vector<std::string> known{
      "p",    "m",     "delta",   "mesh",        "coefficients", "solver_tol",
      "quad_bump", "out", "plot", "threads", "record_time", "zero_source"};
  for (const auto &[key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw Error(ErrorKind::Parse, "unknown configuration field '" + key + "'");
  if (j.contains("p"))
    c.p = get_field<int>(j, "p");
  if (j.contains("m"))
    c.m = get_field<int>(j, "m");
  if (j.contains("delta"))
    c.delta = get_field<double>(j, "delta");
  if (j.contains("solver_tol"))
    c.solver_tol = get_field<double>(j, "solver_tol");
  if (j.contains("quad_bump"))
    c.quad_bump = get_field<int>(j, "quad_bump");
  if (j.contains("out"))
    c.out = get_field<std::string>(j, "out");
  if (j.contains("plot"))
    c.plot = get_field<std::string>(j, "plot");
  if (j.contains("threads"))
    c.threads = get_field<int>(j, "threads");
  if (j.contains("record_time"))
    c.record_time = get_field<bool>(j, "record_time");
  if (j.contains("zero_source"))
    c.zero_source = get_field<bool>(j, "zero_source");
  if (j.contains("mesh")) {
    const json &mj = j["mesh"];
    if (mj.is_string()) {
      parse_mesh_spec(mj.get<std::string>(), c);
    } else if (mj.is_object() && mj.contains("n")) {
      c.structured_n = get_field<std::vector<int>>(mj, "n");
      c.mesh_files.clear();
    } else if (mj.is_object() && mj.contains("files")) {
      c.mesh_files = get_field<std::vector<std::string>>(mj, "files");
      c.structured_n.clear();
    } else {
      throw Error(ErrorKind::Parse, "field 'mesh' needs 'n' or 'files'");
    }
  }
  if (j.contains("coefficients")) {
    const json &cj = j["coefficients"];
    if (!cj.is_object())
      throw Error(ErrorKind::Parse, "field 'coefficients' must be an object");
    for (const auto &[key, value] : cj.items()) {
      if (key == "epsilon")
        read_tensors(value, key, c.coeffs.epsilon_by_region);
      else if (key == "chi")
        read_tensors(value, key, c.coeffs.chi_by_region);
      else
        throw Error(ErrorKind::Parse, "unknown coefficient '" + key + "' (epsilon or chi)");
    }
  }
}

std::string fmt(double v) {
  if (std::isnan(v))
    return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace

void ExperimentConfig::validate() const {
  EQMAX_REQUIRE(m >= 1, ErrorKind::InvalidArgument, "field 'm' is required (integer >= 1)");
  EQMAX_REQUIRE(delta > 0.0, ErrorKind::InvalidArgument,
                "field 'delta' must be positive (delta = 0 is a cavity resonance)");
  EQMAX_REQUIRE(p >= 1 && p <= 3, ErrorKind::InvalidArgument, "field 'p' must be 1, 2 or 3");
  EQMAX_REQUIRE(structured_n.empty() != mesh_files.empty(), ErrorKind::InvalidArgument,
                "field 'mesh' must list structured resolutions or mesh files");
  for (std::size_t i = 0; i < structured_n.size(); ++i) {
    EQMAX_REQUIRE(structured_n[i] >= 1, ErrorKind::InvalidArgument,
                  "field 'mesh': resolutions must be positive");
    EQMAX_REQUIRE(i == 0 || structured_n[i] > structured_n[i - 1], ErrorKind::InvalidArgument,
                  "field 'mesh': resolutions must be strictly increasing");
  }
  EQMAX_REQUIRE(solver_tol > 0.0, ErrorKind::InvalidArgument,
                "field 'solver_tol' must be positive");
  EQMAX_REQUIRE(quad_bump >= 0, ErrorKind::InvalidArgument,
                "field 'quad_bump' must be non-negative");
  EQMAX_REQUIRE(threads >= 1, ErrorKind::InvalidArgument, "field 'threads' must be >= 1");
  coeffs.validate();
}

ExperimentConfig config_from_json(const std::string &json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error &e) {
    throw Error(ErrorKind::Parse, std::string("malformed JSON: ") + e.what());
  }
  ExperimentConfig c;
  apply_json(j, c);
  c.validate();
  return c;
}

ExperimentConfig parse_config(int argc, const char *const *argv, std::string *help) {
  CLI::App app{"Equilibrated a posteriori error estimation for time-harmonic Maxwell"};
  std::string config_path, mesh;
  ExperimentConfig f;
  auto *o_config = app.add_option("--config", config_path, "JSON configuration file");
  auto *o_p = app.add_option("--p", f.p, "Nedelec degree (1-3)");
  auto *o_m = app.add_option("--m", f.m, "mode of the source");
  auto *o_delta = app.add_option("--delta", f.delta, "frequency offset from resonance");
  auto *o_mesh = app.add_option("--mesh", mesh, "n=2,4,8 (structured cube) or files=a.msh,b.msh");
  auto *o_out = app.add_option("--out", f.out, "CSV output path (default stdout)");
  auto *o_plot = app.add_option("--plot", f.plot, "SVG convergence plot path");
  auto *o_threads = app.add_option("--threads", f.threads, "patch worker threads");
  auto *o_tol = app.add_option("--tol", f.solver_tol, "solver residual tolerance");
  auto *o_bump = app.add_option("--quad-bump", f.quad_bump, "extra error quadrature degree");
  auto *o_notime = app.add_flag("--no-timing", "write 0 in the time column");
  auto *o_zero = app.add_flag("--zero-source", "use J = 0");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    if (!help)
      throw Error(ErrorKind::Parse, app.help());
    *help = app.help();
    return ExperimentConfig{};
  } catch (const CLI::ParseError &e) {
    throw Error(ErrorKind::Parse, e.what());
  }

  ExperimentConfig c;
  if (o_config->count()) {
    std::ifstream in(config_path);
    if (!in)
      throw Error(ErrorKind::Parse, "cannot open configuration file '" + config_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    json j;
    try {
      j = json::parse(ss.str());
    } catch (const json::parse_error &e) {
      throw Error(ErrorKind::Parse, config_path + ": malformed JSON: " + e.what());
    }
    apply_json(j, c);
  }
  if (o_p->count())
    c.p = f.p;
  if (o_m->count())
    c.m = f.m;
  if (o_delta->count())
    c.delta = f.delta;
  if (o_mesh->count())
    parse_mesh_spec(mesh, c);
  if (o_out->count())
    c.out = f.out;
  if (o_plot->count())
    c.plot = f.plot;
  if (o_threads->count())
    c.threads = f.threads;
  if (o_tol->count())
    c.solver_tol = f.solver_tol;
  if (o_bump->count())
    c.quad_bump = f.quad_bump;
  if (o_notime->count())
    c.record_time = false;
  if (o_zero->count())
    c.zero_source = true;
  c.validate();
  return c;
}

void write_csv(std::ostream &os, const std::vector<ResultRow> &rows) {
  os << kCsvHeader << '\n';
  for (const auto &r : rows) {
    os << fmt(r.h) << ',' << r.ndof;
    for (double v : {r.err, r.est, r.eta_div, r.eta_curl, r.eff, r.curl_res, r.div_res, r.time})
      os << ',' << fmt(r.failed ? kNaN : v);
    os << '\n';
  }
}

std::vector<ResultRow> read_csv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line) || line != kCsvHeader)
    throw Error(ErrorKind::Parse, "CSV header mismatch");
  std::vector<ResultRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty())
      continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
      cells.push_back(cell);
    if (cells.size() != 10)
      throw Error(ErrorKind::Parse, "CSV line " + std::to_string(lineno) + ": expected 10 columns");
    std::array<double, 10> v{};
    for (int i = 0; i < 10; ++i) {
      char *end = nullptr;
      v[i] = std::strtod(cells[i].c_str(), &end);
      if (end == cells[i].c_str() || *end != '\0')
        throw Error(ErrorKind::Parse, "CSV line " + std::to_string(lineno) + ": bad number '" +
                                          cells[i] + "'");
    }
    ResultRow r;
    r.h = v[0];
    r.ndof = static_cast<int>(v[1]);
    r.err = v[2];
    r.est = v[3];
    r.eta_div = v[4];
    r.eta_curl = v[5];
    r.eff = v[6];
    r.curl_res = v[7];
    r.div_res = v[8];
    r.time = v[9];
    r.failed = std::isnan(r.err);
    rows.push_back(r);
  }
  return rows;
}

ResultRow run_single(std::shared_ptr<const Topology> topo, const ExperimentConfig &config) {
  const auto start = std::chrono::steady_clock::now();
  ResultRow row;
  row.h = mesh_stats(topo->mesh).h;
  ExactSolution exact = manufactured_solution(config.m, config.delta);
  if (config.zero_source) {
    const VectorFunction zero = [](const Vec3 &) { return Vec3c::Zero().eval(); };
    exact.E = exact.curlE = exact.J = zero;
  }
  MaxwellOptions mopts;
  mopts.tol = config.solver_tol;
  const PrimalSolution sol =
      solve_maxwell(topo, config.p, exact.omega, config.coeffs, exact.J, mopts);
  row.ndof = sol.ndof;
  EquilibrationOptions eopts;
  eopts.threads = config.threads;
  const EquilibrationResult eq = equilibrate(sol, config.coeffs, eopts);
  const ResidualReport res =
      verify_equilibration(eq.D, eq.H, sol.J, sol.omega, eq.div_scale, false);
  const LocalEstimators est = local_estimators(sol.E, eq.D, eq.H, config.coeffs, sol.omega);
  const int deg = std::max(2 * config.p + 4, 10) + config.quad_bump;
  const EnergyNorm err = energy_error(sol.E, exact, config.coeffs, deg);
  const EstimatorReport rep = effectivity_report(est, err, res, sol.ndof, row.h);
  row.err = rep.err;
  row.est = rep.eta;
  row.eta_div = rep.eta_div;
  row.eta_curl = rep.eta_curl;
  row.eff = rep.effectivity ? row.est / row.err : kNaN;
  row.curl_res = res.curl_residual;
  row.div_res = res.div_residual;
  if (config.record_time)
    row.time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

std::vector<ResultRow> run_convergence_study(const ExperimentConfig &config, std::ostream *log) {
  config.validate();
  std::vector<ResultRow> rows;
  const std::size_t count =
      config.structured_n.empty() ? config.mesh_files.size() : config.structured_n.size();
  for (std::size_t i = 0; i < count; ++i) {
    const std::string label = config.structured_n.empty()
                                  ? config.mesh_files[i]
                                  : "n=" + std::to_string(config.structured_n[i]);
    ResultRow row;
    try {
      Mesh mesh = config.structured_n.empty() ? load_gmsh(config.mesh_files[i])
                                              : generate_structured_cube(config.structured_n[i]);
      row.h = mesh_stats(mesh).h;
      auto topo = std::make_shared<const Topology>(build_topology(std::move(mesh)));
      row = run_single(topo, config);
    } catch (const Error &e) {
      const bool recoverable = e.kind() == ErrorKind::SolverFailure ||
                               e.kind() == ErrorKind::EquilibrationFailure ||
                               e.kind() == ErrorKind::Infeasible ||
                               e.kind() == ErrorKind::NumericalFailure;
      if (!recoverable)
        throw;
      row.failed = true;
      row.failure = e.what();
    }
    if (log) {
      if (row.failed)
        *log << label << ": FAILED (" << row.failure << ")\n";
      else
        *log << label << ": ndof=" << row.ndof << " err=" << row.err << " est=" << row.est
             << " eff=" << row.eff << " curl_res=" << row.curl_res << " div_res=" << row.div_res
             << " time=" << row.time << "s\n";
    }
    rows.push_back(row);
  }
  if (!config.out.empty()) {
    std::ofstream os(config.out);
    EQMAX_REQUIRE(os.good(), ErrorKind::InvalidArgument, "cannot write '" + config.out + "'");
    write_csv(os, rows);
  }
  if (!config.plot.empty()) {
    std::ofstream os(config.plot);
    EQMAX_REQUIRE(os.good(), ErrorKind::InvalidArgument, "cannot write '" + config.plot + "'");
    write_svg(os, rows, config.p);
  }
  return rows;
}

RateSummary compute_rates(const std::vector<ResultRow> &rows) {
  std::vector<const ResultRow *> ok;
  for (const auto &r : rows)
    if (!r.failed)
      ok.push_back(&r);
  EQMAX_REQUIRE(ok.size() >= 2, ErrorKind::InsufficientData,
                "rates need at least two successful rows");
  RateSummary s;
  for (std::size_t i = 0; i + 1 < ok.size(); ++i) {
    const double lh = std::log(ok[i]->h / ok[i + 1]->h);
    s.err.push_back(std::log(ok[i]->err / ok[i + 1]->err) / lh);
    s.est.push_back(std::log(ok[i]->est / ok[i + 1]->est) / lh);
  }
  auto [emin, emax] = std::minmax_element(s.err.begin(), s.err.end());
  auto [smin, smax] = std::minmax_element(s.est.begin(), s.est.end());
  s.err_min = *emin;
  s.err_max = *emax;
  s.est_min = *smin;
  s.est_max = *smax;
  return s;
}

void write_svg(std::ostream &os, const std::vector<ResultRow> &rows, int p) {
  constexpr double W = 640, H = 480, L = 70, R = 20, T = 20, B = 50;
  std::vector<const ResultRow *> ok;
  for (const auto &r : rows)
    if (!r.failed && r.err > 0.0 && r.est > 0.0)
      ok.push_back(&r);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (ok.empty()) {
    os << "<text x=\"" << W / 2 << "\" y=\"" << H / 2
       << "\" text-anchor=\"middle\">no data</text>\n</svg>\n";
    return;
  }
  double hx0 = 1e300, hx1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto *r : ok) {
    hx0 = std::min(hx0, std::log10(r->h));
    hx1 = std::max(hx1, std::log10(r->h));
    for (double v : {r->err, r->est}) {
      y0 = std::min(y0, std::log10(v));
      y1 = std::max(y1, std::log10(v));
    }
  }
  hx0 = std::floor(hx0 * 10) / 10 - 0.1;
  hx1 = std::ceil(hx1 * 10) / 10 + 0.1;
  y0 = std::floor(y0) - 0.2;
  y1 = std::ceil(y1) + 0.2;
  auto X = [&](double h) { return L + (std::log10(h) - hx0) / (hx1 - hx0) * (W - L - R); };
  auto Y = [&](double v) { return H - B - (std::log10(v) - y0) / (y1 - y0) * (H - T - B); };
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\""
     << H - T - B << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int e = static_cast<int>(std::ceil(y0)); e <= static_cast<int>(std::floor(y1)); ++e)
    os << "<text x=\"" << L - 6 << "\" y=\"" << Y(std::pow(10.0, e)) + 4
       << "\" text-anchor=\"end\" font-size=\"12\">1e" << e << "</text>\n";
  for (const auto *r : ok)
    os << "<text x=\"" << X(r->h) << "\" y=\"" << H - B + 18
       << "\" text-anchor=\"middle\" font-size=\"12\">" << fmt(std::round(r->h * 1e4) / 1e4)
       << "</text>\n";
  os << "<text x=\"" << (W + L - R) / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-size=\"14\">h</text>\n";
  auto series = [&](auto get, const char *color, const char *dash) {
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
       << (dash ? std::string(" stroke-dasharray=\"") + dash + "\"" : std::string()) << " points=\"";
    for (const auto *r : ok)
      os << X(r->h) << ',' << Y(get(*r)) << ' ';
    os << "\"/>\n";
    for (const auto *r : ok)
      os << "<circle cx=\"" << X(r->h) << "\" cy=\"" << Y(get(*r)) << "\" r=\"3\" fill=\"" << color
         << "\"/>\n";
  };
  series([](const ResultRow &r) { return r.err; }, "#1f77b4", nullptr);
  series([](const ResultRow &r) { return r.est; }, "#d62728", nullptr);
  const ResultRow &first = *ok.front();
  const ResultRow &last = *ok.back();
  const double ref_last = first.err * std::pow(last.h / first.h, p + 1);
  os << "<line x1=\"" << X(first.h) << "\" y1=\"" << Y(first.err) << "\" x2=\"" << X(last.h)
     << "\" y2=\"" << Y(ref_last) << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  const double lx = L + 12, ly = T + 18;
  os << "<text x=\"" << lx << "\" y=\"" << ly << "\" fill=\"#1f77b4\" font-size=\"13\">error</text>\n"
     << "<text x=\"" << lx << "\" y=\"" << ly + 18
     << "\" fill=\"#d62728\" font-size=\"13\">estimator</text>\n"
     << "<text x=\"" << lx << "\" y=\"" << ly + 36 << "\" fill=\"gray\" font-size=\"13\">h^"
     << p + 1 << "</text>\n</svg>\n";
}

} // namespace eqmax
