#include "run_config.hpp"

#include "cellflow/common.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cellflow;
using namespace cellflow::cli;
namespace fs = std::filesystem;

namespace {

const std::string kCli = CELLFLOW_CLI_PATH;

int run(const std::string& args) {
  const std::string cmd = "\"" + kCli + "\" " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cellflow_cli_" + name);
  fs::remove_all(p);
  return p;
}

// The single <root>/<command>/<hash> directory of a run.
fs::path run_dir(const fs::path& root, const std::string& command) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root / command)) dirs.push_back(e.path());
  REQUIRE(dirs.size() == 1);
  return dirs.front();
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("value parsing") {
  CHECK(parse_value("0.5") == 0.5);
  CHECK(parse_value("true") == true);
  CHECK(parse_value("[1, 2]") == nlohmann::json::array({1, 2}));
  CHECK(parse_value("1,2.5") == nlohmann::json::array({1, 2.5}));
  CHECK(parse_value("sin_sin") == "sin_sin");
  CHECK(parse_value("null").is_null());
}

TEST_CASE("config layering and validation") {
  RunConfig rc;
  rc.command = "simulate";
  rc.values = RunConfig::defaults("simulate");
  CHECK(rc.num("eps") == 1e-3);
  CHECK(rc.str("hamiltonian") == "sin_sin");
  rc.merge({{"eps", 0.01}, {"sim.horizon", 2.0}, {"command", "simulate"}}, "file");
  CHECK(rc.num("eps") == 0.01);
  CHECK(rc.sim().horizon == 2.0);
  CHECK_THROWS_AS(rc.merge({{"bogus", 1}}, "file"), ConfigError);
  CHECK_THROWS_AS(rc.merge({{"command", "coeffs"}}, "file"), ConfigError);
  CHECK_THROWS_AS(rc.set("nope", 1), ConfigError);
  rc.set("seed", -1);
  CHECK_THROWS_AS(rc.seed(), ConfigError);
  rc.set("seed", 4);
  rc.set("eps", 1.0);
  CHECK_THROWS_AS(rc.sim(), ConfigError);
  rc.set("hamiltonian", "missing/field.json");
  CHECK_THROWS_AS(rc.field(), ConfigError);
  CHECK_THROWS_AS(RunConfig::defaults("nonsense"), ConfigError);
  CHECK(!RunConfig::defaults("coeffs").contains("format"));
}

TEST_CASE("config files: nested, flat and artifact-embedded") {
  const auto dir = scratch("files");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "nested.json") << R"({"eps": 0.02, "sim": {"horizon": 3}})";
    std::ofstream(dir / "artifact.json") << R"({"cfg_hash": "x", "config": {"eps": 0.03, "sim.dt_max": 0.05}})";
    std::ofstream(dir / "broken.json") << "{";
  }
  const auto nested = load_config_file(dir / "nested.json");
  CHECK(nested["sim.horizon"] == 3);
  CHECK(nested["eps"] == 0.02);
  const auto art = load_config_file(dir / "artifact.json");
  CHECK(art["eps"] == 0.03);
  CHECK(art["sim.dt_max"] == 0.05);
  CHECK_THROWS_AS(load_config_file(dir / "broken.json"), ConfigError);
  CHECK_THROWS_AS(load_config_file(dir / "absent.json"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit with 2") {
  const auto root = scratch("usage");
  CHECK(run("") == 2);
  CHECK(run("coeffs --hamiltonian /no/such/file.json --out " + root.string()) == 2);
  CHECK(run("simulate --eps 2 --out " + root.string()) == 2);
  CHECK(run("simulate --set nothing=1 --out " + root.string()) == 2);
  CHECK(run("simulate --format xml --out " + root.string()) == 2);
  CHECK(run("--help") == 0);
  fs::remove_all(root);
}

TEST_CASE("coeffs reports q = 8 and ignores --json") {
  const auto a = scratch("coeffs_a"), b = scratch("coeffs_b");
  REQUIRE(run("coeffs --out " + a.string()) == 0);
  REQUIRE(run("coeffs --json --out " + b.string()) == 0);
  const auto da = run_dir(a, "coeffs"), db = run_dir(b, "coeffs");
  CHECK(da.filename() == db.filename());
  CHECK(slurp(da / "coefficients.json") == slurp(db / "coefficients.json"));
  const auto j = nlohmann::json::parse(slurp(da / "coefficients.json"));
  CHECK(j["cfg_hash"] == da.filename().string());
  for (const auto& q : j["result"]["coefficients"]["q"]) CHECK(q.get<double>() == doctest::Approx(8.0).epsilon(1e-8));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("CELLFLOW_OUT sets the output root") {
  const auto root = scratch("env");
  ::setenv("CELLFLOW_OUT", root.string().c_str(), 1);
  CHECK(run("coeffs") == 0);
  ::unsetenv("CELLFLOW_OUT");
  CHECK(fs::exists(run_dir(root, "coeffs") / "manifest.json"));
  fs::remove_all(root);
}

TEST_CASE("simulate is deterministic across workers and re-runs from its config") {
  const auto a = scratch("sim_a"), b = scratch("sim_b"), c = scratch("sim_c");
  const std::string args = "simulate --eps 1e-2 --n-paths 6 --seed 9 --set sim.horizon=0.2 --format bin";
  REQUIRE(run(args + " --workers 1 --out " + a.string()) == 0);
  REQUIRE(run(args + " --workers 3 --out " + b.string()) == 0);
  const auto da = run_dir(a, "simulate");
  REQUIRE(run("simulate --config " + (da / "config.json").string() + " --format bin --out " + c.string()) == 0);
  const auto db = run_dir(b, "simulate"), dc = run_dir(c, "simulate");
  CHECK(da.filename() == db.filename());
  CHECK(da.filename() == dc.filename());
  CHECK(slurp(da / "paths.bin") == slurp(db / "paths.bin"));
  CHECK(slurp(da / "paths.bin") == slurp(dc / "paths.bin"));
  for (auto* r : {&a, &b, &c}) fs::remove_all(*r);
}

TEST_CASE("solve-fpde keeps a constant datum constant") {
  const auto root = scratch("fpde");
  REQUIRE(run("solve-fpde --set fpde.theta0=const:2 --set fpde.n=8 --json --out " + root.string()) == 0);
  const auto j = nlohmann::json::parse(slurp(run_dir(root, "solve-fpde") / "solution.json"));
  const auto& cols = j["columns"];
  for (const auto& row : j["rows"])
    for (std::size_t k = 0; k < cols.size(); ++k)
      if (cols[k].get<std::string>().rfind("u", 0) == 0) CHECK(row[k].get<double>() == doctest::Approx(2.0).epsilon(1e-12));
  fs::remove_all(root);
}

TEST_CASE("numerical alarm exits with 3") {
  const auto root = scratch("alarm");
  CHECK(run("solve-fpde --set fpde.alarm_tol=1e-12 --set fpde.steps=8 --set fpde.n=8 --out " + root.string()) == 3);
  fs::remove_all(root);
}

TEST_CASE("too few upcrossing cycles exits with 1") {
  const auto root = scratch("fewq");
  CHECK(run("estimate-q --eps 1e-2 --n-paths 10 --out " + root.string()) == 1);
  fs::remove_all(root);
}
