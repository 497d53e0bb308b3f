// Command-line front end: synthesize / simulate / compare / costs / probe over
// a JSON scenario file.

#include <CLI11.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "sls/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"SLS controller synthesis and deployment-architecture simulation"};
  app.require_subcommand(1);

  sls::CommandOptions opt;
  std::string arch_csv;
  uint64_t seed = 0;
  double tol = 0.0;
  bool seed_set = false, tol_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--scenario", opt.scenario_path, "scenario JSON file")->required();
    cmd->add_option("--out", opt.out_dir, "output directory (default: current)");
    cmd->add_option("--seed", seed, "override the disturbance seed")
        ->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--tol", tol, "override the comparison/probe tolerance")
        ->each([&](const std::string&) { tol_set = true; });
  };

  auto* synthesize = app.add_subcommand("synthesize", "solve the scenario's synthesis program");
  add_common(synthesize);
  auto* simulate = app.add_subcommand("simulate", "deploy and run the closed loop, writing trace and ledger");
  add_common(simulate);
  auto* compare = app.add_subcommand("compare", "deviation of deployed architectures from the reference");
  add_common(compare);
  compare->add_option("--arch", arch_csv, "comma-separated architecture ids");
  auto* costs = app.add_subcommand("costs", "predicted vs measured cost report");
  add_common(costs);
  auto* probe = app.add_subcommand("probe", "internal-stability perturbation grid");
  add_common(probe);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors map to exit 1
  }

  if (seed_set) opt.seed = seed;
  if (tol_set) opt.tol = tol;
  if (!arch_csv.empty()) {
    std::stringstream ss(arch_csv);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) opt.architectures.push_back(item);
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  return sls::run_command(verb, opt);
}
