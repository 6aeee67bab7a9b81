// Convergence study driver: solve, equilibrate and estimate on a mesh series.
#include "eqmax/study.hpp"

#include <iostream>

int main(int argc, char **argv) {
  using namespace eqmax;
  try {
    std::string help;
    const ExperimentConfig config = parse_config(argc, argv, &help);
    if (!help.empty()) {
      std::cout << help;
      return 0;
    }
    const auto rows = run_convergence_study(config, &std::cerr);
    if (config.out.empty())
      write_csv(std::cout, rows);
    try {
      const RateSummary rates = compute_rates(rows);
      std::cerr << "err slopes:";
      for (double s : rates.err)
        std::cerr << ' ' << s;
      std::cerr << "\nest slopes:";
      for (double s : rates.est)
        std::cerr << ' ' << s;
      std::cerr << '\n';
    } catch (const Error &e) {
      if (e.kind() != ErrorKind::InsufficientData)
        throw;
    }
    for (const auto &r : rows)
      if (r.failed)
        return 3;
    return 0;
  } catch (const Error &e) {
    std::cerr << "eqmax: " << e.what() << '\n';
    return e.kind() == ErrorKind::Parse || e.kind() == ErrorKind::InvalidArgument ? 2 : 1;
  }
}
