// Command layer: exit codes, artifact layout, and (when the binary path is
// provided by the build) end-to-end process checks.
#include "adaptive_kernel/cli.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace adaptive_kernel;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

nlohmann::json tiny_train_config() {
  nlohmann::json cfg;
  cfg["data"]["kind"] = "random-label";
  cfg["data"]["n"] = 10;
  cfg["data"]["d"] = 3;
  cfg["data"]["seed"] = 5;
  cfg["model"]["m"] = 16;
  cfg["flow"]["eta"] = 0.01;
  cfg["flow"]["max_steps"] = 50;
  cfg["flow"]["log_every"] = 10;
  return cfg;
}

}  // namespace

TEST_CASE("guarded_run maps exceptions to documented exit codes") {
  CHECK(guarded_run([] { return kExitOk; }) == 0);
  CHECK(guarded_run([]() -> int { throw config_error("bad"); }) == 2);
  CHECK(guarded_run([]() -> int { throw std::runtime_error("boom"); }) == 1);
}

TEST_CASE("train writes its artifacts and succeeds") {
  const auto dir = fresh_dir("ak_cli_train");
  CHECK(cmd_train(tiny_train_config(), dir) == kExitOk);
  CHECK(std::filesystem::exists(dir / "trajectory.csv"));
  CHECK(std::filesystem::exists(dir / "network.json"));
  CHECK(std::filesystem::exists(dir / "train.json"));

  const nlohmann::json summary = nlohmann::json::parse(slurp(dir / "train.json"));
  CHECK(summary["termination"] == "max_steps");
  CHECK(summary["steps"] == 50);
  CHECK(summary["config"]["model"]["m"] == 16);

  // Network artifact round-trips into a valid state.
  const NetworkState net = network_from_json(nlohmann::json::parse(slurp(dir / "network.json")));
  CHECK(net.m == 16);

  // Re-running the same configuration reproduces the trajectory bitwise.
  const auto dir2 = fresh_dir("ak_cli_train2");
  CHECK(cmd_train(tiny_train_config(), dir2) == kExitOk);
  CHECK(slurp(dir / "trajectory.csv") == slurp(dir2 / "trajectory.csv"));
}

TEST_CASE("train can dump gram sidecars") {
  auto cfg = tiny_train_config();
  cfg["output"]["grams"] = true;
  const auto dir = fresh_dir("ak_cli_train_grams");
  CHECK(cmd_train(cfg, dir) == kExitOk);
  CHECK(std::filesystem::exists(dir / "gram_k.csv"));
  CHECK(std::filesystem::exists(dir / "gram_k.csv.json"));
  CHECK(std::filesystem::exists(dir / "gram_h.csv"));
  const nlohmann::json sidecar = nlohmann::json::parse(slurp(dir / "gram_k.csv.json"));
  CHECK(sidecar["n"] == 10);
  CHECK(sidecar["tag"] == "K");
  CHECK(sidecar.contains("symmetry_defect"));
  CHECK(sidecar.contains("provenance"));
}

TEST_CASE("unknown keys and bad values exit with the config code") {
  auto cfg = tiny_train_config();
  cfg["flow"]["typo_key"] = 1;
  CHECK(guarded_run([&] { return cmd_train(cfg, fresh_dir("ak_cli_bad")); }) == kExitConfig);

  auto bad_loss = tiny_train_config();
  bad_loss["flow"]["loss"] = "cubic";
  CHECK(guarded_run([&] { return cmd_train(bad_loss, fresh_dir("ak_cli_bad2")); }) ==
        kExitConfig);

  auto bad_kind = tiny_train_config();
  bad_kind["data"]["kind"] = "nope";
  CHECK(guarded_run([&] { return cmd_train(bad_kind, fresh_dir("ak_cli_bad3")); }) ==
        kExitConfig);
}

TEST_CASE("divergence exits nonzero but still writes the trajectory") {
  auto cfg = tiny_train_config();
  cfg["flow"]["eta"] = 1e8;
  const auto dir = fresh_dir("ak_cli_diverge");
  CHECK(cmd_train(cfg, dir) == kExitRuntime);
  const nlohmann::json summary = nlohmann::json::parse(slurp(dir / "train.json"));
  CHECK(summary["termination"] == "diverged");
  CHECK(std::filesystem::exists(dir / "trajectory.csv"));
}

TEST_CASE("spectrum command writes the experiment bundle") {
  nlohmann::json cfg;
  cfg["data"]["kind"] = "teacher";
  cfg["data"]["n"] = 10;
  cfg["data"]["d"] = 3;
  cfg["data"]["J"] = 2;
  cfg["data"]["seed"] = 6;
  cfg["model"]["m"] = 12;
  cfg["flow"]["eta"] = 0.02;
  cfg["flow"]["max_steps"] = 40;
  cfg["experiment"]["id"] = "cli-spectrum";
  cfg["experiment"]["snapshot_steps"] = {0, 20, 40};
  const auto dir = fresh_dir("ak_cli_spectrum");
  CHECK(cmd_spectrum(cfg, dir) == kExitOk);
  CHECK(std::filesystem::exists(dir / "spectra.csv"));
  CHECK(std::filesystem::exists(dir / "trajectory.csv"));
  CHECK(std::filesystem::exists(dir / "spec.json"));
  const std::string spectra = slurp(dir / "spectra.csv");
  CHECK(spectra.find("cli-spectrum") != std::string::npos);
}

TEST_CASE("k0-table honors the grid and writes the table") {
  nlohmann::json cfg;
  cfg["grid"] = 5;
  cfg["samples"] = 2000;
  const auto dir = fresh_dir("ak_cli_k0");
  CHECK(cmd_k0_table(cfg, dir) == kExitOk);
  const std::string table = slurp(dir / "k0_table.csv");
  // Header plus one row per grid point.
  CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  nlohmann::json bad;
  bad["grid"] = 1;
  CHECK(guarded_run([&] { return cmd_k0_table(bad, fresh_dir("ak_cli_k0_bad")); }) ==
        kExitConfig);
}

TEST_CASE("verify rejects unknown suites and writes a report") {
  nlohmann::json cfg;
  cfg["suites"] = {"psd-chain"};
  const auto dir = fresh_dir("ak_cli_verify");
  CHECK(cmd_verify(cfg, dir) == kExitOk);
  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "report.json"));
  REQUIRE(report.is_array());
  CHECK(report.size() == 50);
  CHECK(report[0].contains("suite"));
  CHECK(report[0].contains("pass"));

  nlohmann::json bad;
  bad["suites"] = {"astrology"};
  CHECK(guarded_run([&] { return cmd_verify(bad, fresh_dir("ak_cli_verify_bad")); }) ==
        kExitConfig);
}

TEST_CASE("ridge-compare writes the sweep table") {
  nlohmann::json cfg;
  cfg["n"] = 8;
  cfg["d"] = 3;
  cfg["m"] = 20;
  cfg["lambdas"] = {1e-1};
  cfg["flow"]["eta"] = 0.05;
  cfg["flow"]["max_steps"] = 50000;
  cfg["flow"]["eps_grad"] = 1e-6;
  const auto dir = fresh_dir("ak_cli_ridge");
  CHECK(cmd_ridge_compare(cfg, dir) == kExitOk);
  const std::string table = slurp(dir / "ridge_compare.csv");
  CHECK(table.find("lambda,lambda_eff,steps,grad_norm,max_discrepancy,ratio_norm") == 0);
}

#ifdef ADAPTIVE_KERNEL_BIN
TEST_CASE("the installed binary honors the exit-code contract end to end") {
  const std::string bin = ADAPTIVE_KERNEL_BIN;
  const auto dir = fresh_dir("ak_cli_e2e");
  std::filesystem::create_directories(dir);

  auto run = [&](const std::string& args) {
    const std::string cmd = bin + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("k0-table --set grid=3 --set samples=500 -o " + (dir / "k0").string()) == 0);

  const auto broken = dir / "broken.toml";
  std::ofstream(broken) << "[flow\neta = 0.5\n";
  CHECK(run("train --config " + broken.string()) == 2);

  const auto good = dir / "good.toml";
  std::ofstream(good) << "[data]\nkind = \"random-label\"\nn = 8\nd = 3\n"
                         "[model]\nm = 10\n[flow]\neta = 0.01\nmax_steps = 20\n";
  CHECK(run("train --config " + good.string() + " -o " + (dir / "train").string()) == 0);
  CHECK(run("train --config " + good.string() + " --set flow.eta=1e9 -o " +
            (dir / "boom").string()) == 1);
  CHECK(run("no-such-command") != 0);
}
#endif
