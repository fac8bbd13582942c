// adaptive-kernel: train shallow ReLU networks by discretized gradient flow,
// track the training-induced kernels, and verify their invariants.
#include "adaptive_kernel/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string outdir = "out";
};

void attach_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("-c,--config", args.config_path, "TOML or JSON configuration file");
  sub->add_option("-s,--set", args.overrides,
                  "Override a config key, e.g. --set flow.eta=0.01 (repeatable)");
  sub->add_option("-o,--out", args.outdir, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace adaptive_kernel;

  CLI::App app{"Shallow ReLU training dynamics and their induced kernels"};
  app.require_subcommand(1);

  struct Command {
    const char* name;
    const char* help;
    std::function<int(const nlohmann::json&, const std::filesystem::path&)> run;
    CommonArgs args;
  };
  std::vector<Command> commands;
  commands.push_back({"train", "Run the discretized gradient flow and save the trajectory",
                      cmd_train, {}});
  commands.push_back({"spectrum", "Track kernel eigen-spectra along training",
                      cmd_spectrum, {}});
  commands.push_back({"verify", "Run invariant suites and write a pass/fail report",
                      cmd_verify, {}});
  commands.push_back({"k0-table", "Tabulate the init-time kernel: closed form vs Monte Carlo",
                      cmd_k0_table, {}});
  commands.push_back({"ridge-compare",
                      "Compare trained networks against kernel ridge solutions",
                      cmd_ridge_compare, {}});
  for (auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    attach_common(sub, cmd.args);
  }

  CLI11_PARSE(app, argc, argv);

  for (auto& cmd : commands) {
    if (!app.get_subcommand(cmd.name)->parsed()) continue;
    return guarded_run([&cmd]() {
      nlohmann::json config = cmd.args.config_path.empty()
                                  ? nlohmann::json::object()
                                  : load_config_file(cmd.args.config_path);
      apply_overrides(config, cmd.args.overrides);
      return cmd.run(config, cmd.args.outdir);
    });
  }
  return kExitConfig;  // unreachable: require_subcommand(1) guarantees a match
}
