#pragma once

#include "eqmax/estimate.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace eqmax {

struct ExperimentConfig {
  /// Structured cube resolutions (strictly increasing) or Gmsh files; one of
  /// the two is non-empty.
  std::vector<int> structured_n;
  std::vector<std::string> mesh_files;
  int p = 1;
  int m = 0;
  double delta = 0.0;
  CoefficientField coeffs;
  double solver_tol = 1e-10;
  /// Added to the default energy-error quadrature degree.
  int quad_bump = 0;
  std::string out;  // CSV path; empty writes to stdout
  std::string plot; // SVG path; empty disables the plot
  int threads = 1;
  /// Writes 0 in the time column so repeated runs give identical bytes.
  bool record_time = true;
  /// Replaces J (and the exact field) by zero.
  bool zero_source = false;

  /// Throws invalid-argument naming the offending field.
  void validate() const;
};

/// Flags override the JSON file given with --config. Throws parse errors for
/// malformed input and invalid-argument for missing or invalid fields.
/// With `help` non-null, --help fills it and returns an unvalidated config.
ExperimentConfig parse_config(int argc, const char *const *argv, std::string *help = nullptr);
ExperimentConfig config_from_json(const std::string &json_text);

struct ResultRow {
  double h = 0.0;
  int ndof = 0;
  double err = 0.0;
  double est = 0.0;
  double eta_div = 0.0;
  double eta_curl = 0.0;
  double eff = 0.0; // NaN when err = 0
  double curl_res = 0.0;
  double div_res = 0.0;
  double time = 0.0;
  bool failed = false;
  std::string failure;
};

inline constexpr const char *kCsvHeader =
    "h,ndof,err,est,eta_div,eta_curl,eff,curl_res,div_res,time";

/// Failed rows are written with NaN in every numeric column except h and ndof.
void write_csv(std::ostream &os, const std::vector<ResultRow> &rows);
std::vector<ResultRow> read_csv(std::istream &is);

/// Solve, equilibrate, verify and estimate on one mesh.
ResultRow run_single(std::shared_ptr<const Topology> topo, const ExperimentConfig &config);

/// Runs every mesh of the series in order. Rows that fail are kept, marked,
/// and the series continues. Writes the CSV (and SVG) when requested.
std::vector<ResultRow> run_convergence_study(const ExperimentConfig &config,
                                             std::ostream *log = nullptr);

struct RateSummary {
  std::vector<double> err;
  std::vector<double> est;
  double err_min = 0.0, err_max = 0.0;
  double est_min = 0.0, est_max = 0.0;
};

/// Slopes log(x_i/x_{i+1}) / log(h_i/h_{i+1}) over successful rows; throws
/// insufficient-data for fewer than two.
RateSummary compute_rates(const std::vector<ResultRow> &rows);

/// Log-log plot of err and est against h with a reference slope p+1.
void write_svg(std::ostream &os, const std::vector<ResultRow> &rows, int p);

} // namespace eqmax
