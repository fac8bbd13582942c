// Configuration parsing: the TOML subset, JSON files, --set overrides, and
// the strict typed reader.
#include "adaptive_kernel/config.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

using namespace adaptive_kernel;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path);
  out << text;
  return path;
}

}  // namespace

TEST_CASE("toml subset parses tables, scalars, and arrays") {
  const auto cfg = parse_toml(
      "# run configuration\n"
      "title = \"spectrum sweep\"\n"
      "\n"
      "[flow]\n"
      "eta = 0.05          # step size\n"
      "max_steps = 10000\n"
      "verbose = true\n"
      "tag = \"a#b\"\n"
      "\n"
      "[experiment]\n"
      "snapshot_steps = [0, 10, 100]\n"
      "keep_fraction = 8e-1\n"
      "\n"
      "[data.teacher]\n"
      "J = 4\n");
  CHECK(cfg["title"] == "spectrum sweep");
  CHECK(cfg["flow"]["eta"] == 0.05);
  CHECK(cfg["flow"]["max_steps"] == 10000);
  CHECK(cfg["flow"]["max_steps"].is_number_integer());
  CHECK(cfg["flow"]["verbose"] == true);
  CHECK(cfg["flow"]["tag"] == "a#b");  // '#' inside a string is not a comment
  CHECK(cfg["experiment"]["snapshot_steps"].size() == 3);
  CHECK(cfg["experiment"]["snapshot_steps"][2] == 100);
  CHECK(cfg["experiment"]["keep_fraction"] == 0.8);
  CHECK(cfg["data"]["teacher"]["J"] == 4);
}

TEST_CASE("string escapes are honored") {
  const auto cfg = parse_toml("s = \"line\\nbreak\\t\\\"q\\\" \\\\\"\n");
  CHECK(cfg["s"] == "line\nbreak\t\"q\" \\");
}

TEST_CASE("toml errors carry the line number") {
  auto expect_line = [](const std::string& text, const std::string& needle) {
    try {
      parse_toml(text);
      FAIL("expected a parse error for: " + text);
    } catch (const config_error& e) {
      const std::string msg = e.what();
      INFO(msg);
      CHECK(msg.find(needle) != std::string::npos);
    }
  };
  expect_line("a = 1\nb = \n", "line 2");
  expect_line("a = 1\nb ~ 2\n", "line 2");
  expect_line("[t\nx = 1\n", "line 1");
  expect_line("a = \"open\n", "line 1");
  expect_line("a = [1, 2\n", "line 1");
  expect_line("a = 12abc\n", "line 1");
  expect_line("a = 1\n\n\nweird key! = 2\n", "line 4");
}

TEST_CASE("scalar and table collisions are rejected") {
  CHECK_THROWS_AS(parse_toml("a = 1\na.b = 2\n"), config_error);
}

TEST_CASE("config files load by extension and report json errors") {
  const auto toml = write_temp("ak_cfg.toml", "[flow]\neta = 0.5\n");
  CHECK(load_config_file(toml)["flow"]["eta"] == 0.5);

  const auto json = write_temp("ak_cfg.json", "{\"flow\": {\"eta\": 0.25}}");
  CHECK(load_config_file(json)["flow"]["eta"] == 0.25);

  const auto broken = write_temp("ak_broken.json", "{\"flow\": ");
  CHECK_THROWS_AS(load_config_file(broken), config_error);
  CHECK_THROWS_AS(load_config_file("/nonexistent.toml"), config_error);
}

TEST_CASE("overrides layer typed values onto the tree") {
  nlohmann::json cfg = parse_toml("[flow]\neta = 0.5\n");
  apply_overrides(cfg, {"flow.eta=0.25", "flow.max_steps=100", "data.kind=teacher",
                        "experiment.snapshot_steps=[1, 2, 3]", "flow.note=\"quoted\""});
  CHECK(cfg["flow"]["eta"] == 0.25);
  CHECK(cfg["flow"]["max_steps"] == 100);
  CHECK(cfg["data"]["kind"] == "teacher");  // bare string fallback
  CHECK(cfg["experiment"]["snapshot_steps"].size() == 3);
  CHECK(cfg["flow"]["note"] == "quoted");
  CHECK_THROWS_AS(apply_overrides(cfg, {"no-equals-sign"}), config_error);
  CHECK_THROWS_AS(apply_overrides(cfg, {"bad key!=1"}), config_error);
}

TEST_CASE("reader enforces types and rejects unknown keys") {
  const auto cfg = parse_toml("[flow]\neta = 0.5\nmax_steps = 100\n[data]\nkind = \"csv\"\n");
  ConfigReader r(cfg);
  CHECK(r.get<double>("flow.eta", 1.0) == 0.5);
  CHECK(r.get<double>("flow.missing", 7.0) == 7.0);
  CHECK(r.require<std::int64_t>("flow.max_steps") == 100);
  CHECK(r.has("data.kind"));
  CHECK_THROWS_AS(r.require<double>("data.kind"), config_error);  // wrong type
  CHECK_THROWS_AS(r.require<double>("data.absent"), config_error);
  r.get<std::string>("data.kind", "");
  r.finalize();  // every key consumed

  ConfigReader strict(cfg);
  strict.get<double>("flow.eta", 1.0);
  try {
    strict.finalize();
    FAIL("expected unknown-key rejection");
  } catch (const config_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("flow.max_steps") != std::string::npos);
    CHECK(msg.find("data.kind") != std::string::npos);
  }
}

TEST_CASE("reader surfaces whole arrays") {
  const auto cfg = parse_toml("steps = [1, 2, 3]\nscalar = 5\n");
  ConfigReader r(cfg);
  CHECK(r.require_array("steps").size() == 3);
  CHECK_THROWS_AS(r.require_array("scalar"), config_error);
  CHECK_THROWS_AS(r.require_array("absent"), config_error);
  r.get<int>("scalar", 0);
  r.finalize();
}
