// Command-line driver: dfm <steady|convergence|twophase|validate|export-matrix> --config FILE

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "dfm/error.hpp"
#include "dfm/run.hpp"

namespace {

struct Common {
  std::string config;
  unsigned threads = 1;
  std::string out_dir = "out";
};

void add_common(CLI::App* app, Common& c, bool needs_out = true) {
  app->add_option("--config", c.config, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option("--threads", c.threads, "assembly threads")->check(CLI::Range(1u, 256u));
  if (needs_out) app->add_option("--out-dir", c.out_dir, "output directory");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interior penalty DG solver for flow in fractured porous media"};
  app.require_subcommand(1);
  Common steady, conv, twophase, validate, exportm;
  add_common(app.add_subcommand("steady", "single-phase pressure solve with slices and VTK"), steady);
  add_common(app.add_subcommand("convergence", "error tables for a manufactured solution"), conv);
  add_common(app.add_subcommand("twophase", "IMPES two-phase run"), twophase);
  add_common(app.add_subcommand("validate", "check a configuration without solving"), validate, false);
  add_common(app.add_subcommand("export-matrix", "write the assembled system"), exportm);
  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "validate") {
      const dfm::RunConfig c = dfm::load_config(validate.config);
      for (const std::string& line : dfm::validate(c)) std::cout << line << '\n';
      std::cout << "configuration OK\n";
    } else if (cmd == "steady") {
      const dfm::RunConfig c = dfm::load_config(steady.config);
      const dfm::SteadyResult r = dfm::run_steady(c, steady.out_dir, steady.threads);
      std::cout << r.cells << " cells, " << r.unknowns << " unknowns, solver " << r.solve.method
                << " (" << r.solve.iterations << " iterations, residual " << r.solve.residual << ")\n";
      for (const auto& s : r.slices) {
        if (s.discrepancy) {
          std::cout << "slice " << s.output.name << ": max |diff| " << s.discrepancy->max_abs
                    << " (" << 100.0 * s.discrepancy->max_rel << "% of range) at s = "
                    << s.discrepancy->worst_s << '\n';
        }
      }
      for (const auto& f : r.files) std::cout << "wrote " << steady.out_dir << '/' << f << '\n';
    } else if (cmd == "convergence") {
      const dfm::RunConfig c = dfm::load_config(conv.config);
      const auto reports = dfm::run_convergence(c, conv.out_dir, conv.threads);
      for (std::size_t i = 0; i < reports.size(); ++i) {
        std::cout << "P" << c.convergence->degrees[i] << "\n" << reports[i].csv();
      }
    } else if (cmd == "twophase") {
      const dfm::RunConfig c = dfm::load_config(twophase.config);
      const dfm::TwoPhaseResult r = dfm::run_twophase(c, twophase.out_dir, twophase.threads);
      std::cout << r.steps << " steps to t = " << r.time << ", saturation in [" << r.s_min << ", "
                << r.s_max << "], worst balance residual " << r.worst_balance << '\n';
      for (const auto& f : r.files) std::cout << "wrote " << twophase.out_dir << '/' << f << '\n';
    } else if (cmd == "export-matrix") {
      const dfm::RunConfig c = dfm::load_config(exportm.config);
      for (const auto& f : dfm::export_matrix(c, exportm.out_dir, exportm.threads)) {
        std::cout << "wrote " << exportm.out_dir << '/' << f << '\n';
      }
    }
  } catch (const dfm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::fprintf(stderr, "elapsed %.2f s\n", seconds_since(t0));
  return 0;
}
