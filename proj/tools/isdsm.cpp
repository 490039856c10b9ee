// isdsm <experiment> --config FILE --seed N --replicates R --out DIR [--plots]
//
// Exit status: 0 when every verdict passes, 1 when any fails, 2 on invalid
// configuration or usage, 3 on a numerical or convergence failure.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "isdsm/isdsm.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Immigration superprocess with dependent spatial motion: simulation and verification"};
  std::string experiment, config_path, out;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  bool plots = false;
  app.add_option("experiment", experiment, "simulate | localtime | scaling-det | scaling-rcbm | verify | rcbm-flow")
      ->required();
  app.add_option("--config", config_path, "JSON configuration file")->required();
  app.add_option("--seed", seed, "master seed")->required();
  app.add_option("--replicates", replicates, "number of replicates")->required()->check(CLI::PositiveNumber);
  app.add_option("--out", out, "output directory")->required();
  app.add_flag("--plots", plots, "emit SVG plots from the CSV artifacts");
  CLI11_PARSE(app, argc, argv);

  try {
    isdsm::RunRequest req;
    req.experiment = experiment;
    req.config = isdsm::load_config(config_path);
    req.config.experiment = experiment;
    req.seed = seed;
    req.replicates = replicates;
    req.out = out;
    req.plots = plots;
    req.threads = isdsm::thread_count();
    const isdsm::RunOutcome res = isdsm::run(req);
    isdsm::print_summary(std::cout, res.reports);
    std::cout << (res.all_pass ? "all checks passed" : "some checks FAILED") << " (" << res.reports.size()
              << " reports, " << out << ")\n";
    return res.all_pass ? 0 : 1;
  } catch (const isdsm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const isdsm::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const isdsm::NonConvergenceError& e) {
    std::cerr << "no convergence: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
