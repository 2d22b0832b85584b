// pfsc: command-line driver for the Penrose-Fife sharp-interface control solver.
//
//   pfsc forward   --config run.json [--out dir] [--seed n] [--verbose]
//   pfsc gradcheck ...
//   pfsc optimize  ...
//   pfsc continue  ...
//   pfsc sweep     ...
//
// Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pfsc/experiment.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kSolverFailure = 3;
constexpr int kIoError = 4;

struct Flags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool verbose = false;
};

int run(const std::string& command, const Flags& f) {
  try {
    auto cfg = pfsc::load_config(f.config);
    if (f.seed_given) cfg.seed = f.seed;
    if (!f.out.empty()) cfg.output = f.out;
    pfsc::RunContext ctx;
    ctx.out = cfg.output;
    if (f.verbose) ctx.log = [](const std::string& s) { std::cerr << s << '\n'; };
    const auto manifest = pfsc::run_command(command, cfg, ctx);
    for (const auto& w : manifest.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << '\n';
    if (f.verbose) std::cerr << "wrote " << (ctx.out / "manifest.json").string() << '\n';
    return 0;
  } catch (const pfsc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const pfsc::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const pfsc::SolverFailure& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const pfsc::GridMismatch& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const pfsc::DomainError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverFailure;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return kIoError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimal control of the Penrose-Fife phase-field system"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pfsc::kVersion));

  Flags flags;
  const char* commands[][2] = {
      {"forward", "solve the state system for the configured controls"},
      {"gradcheck", "compare adjoint gradients with central differences"},
      {"optimize", "solve P_eps, then P_eps,sigma anchored at its optimum"},
      {"continue", "run the eps/sigma continuation schedule"},
      {"sweep", "independent optimize runs over the (eps, sigma) grid"},
  };
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c[0], c[1]);
    sub->add_option("--config", flags.config, "JSON run configuration (or a manifest.json)")->required();
    sub->add_option("--out", flags.out, "output directory (overrides the config)");
    sub->add_option("--seed", flags.seed, "seed for randomized directions")->each([&](const std::string&) {
      flags.seed_given = true;
    });
    sub->add_flag("--verbose", flags.verbose, "progress on stderr");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }
  return run(app.get_subcommands().front()->get_name(), flags);
}
