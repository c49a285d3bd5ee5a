#include "cellflow/common.hpp"
#include "cellflow/io.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace cellflow;
namespace fs = std::filesystem;

namespace {

Table sample_table() {
  Table t;
  t.columns = {"t", "x"};
  t.add({0.0, 1.0 / 3.0});
  t.add({0.5, -2.5e-300});
  return t;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cellflow_io_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

TEST_CASE("format names") {
  CHECK(parse_format("csv") == Format::csv);
  CHECK(parse_format("json") == Format::json);
  CHECK(parse_format("bin") == Format::bin);
  CHECK(to_string(Format::bin) == "bin");
  CHECK_THROWS_AS(parse_format("xml"), ConfigError);
}

TEST_CASE("config hash is FNV-1a of the sorted dump") {
  const nlohmann::json a = {{"eps", 1e-3}, {"seed", 7}, {"hamiltonian", "sin_sin"}};
  const nlohmann::json b = nlohmann::json::parse(R"({"seed":7,"hamiltonian":"sin_sin","eps":0.001})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  nlohmann::json c = a;
  c["seed"] = 8;
  CHECK(config_hash(c) != config_hash(a));
  CHECK(config_hash(nlohmann::json::object()) == "08f44b07b5901a25");
  CHECK(config_hash(a) == fnv1a(R"({"eps":0.001,"hamiltonian":"sin_sin","seed":7})"));
}

TEST_CASE("flatten and unflatten") {
  const auto nested = nlohmann::json::parse(R"({"eps":0.01,"sim":{"horizon":2,"x0":[1,2]},"fpde":{"q":null}})");
  const auto flat = flatten(nested);
  CHECK(flat["sim.horizon"] == 2);
  CHECK(flat["sim.x0"] == nlohmann::json::array({1, 2}));
  CHECK(flat["fpde.q"].is_null());
  CHECK(unflatten(flat) == nested);
  CHECK_THROWS_AS(flatten(nlohmann::json::array()), ConfigError);
}

TEST_CASE("output root honours CELLFLOW_OUT") {
  ::unsetenv("CELLFLOW_OUT");
  CHECK(default_output_root() == fs::path("out"));
  ::setenv("CELLFLOW_OUT", "/tmp/elsewhere", 1);
  CHECK(default_output_root() == fs::path("/tmp/elsewhere"));
  ::setenv("CELLFLOW_OUT", "", 1);
  CHECK(default_output_root() == fs::path("out"));
  ::unsetenv("CELLFLOW_OUT");
}

TEST_CASE("table writers") {
  const auto t = sample_table();
  const nlohmann::json meta = {{"cfg_hash", "abc"}, {"seed", 3}};
  std::ostringstream csv;
  t.write_csv(csv, meta);
  CHECK(csv.str() == "# cfg_hash=abc\n# seed=3\nt,x\n0,0.33333333333333331\n0.5,-2.5e-300\n");

  std::ostringstream js;
  t.write_json(js, meta);
  const auto j = nlohmann::json::parse(js.str());
  CHECK(j["seed"] == 3);
  CHECK(j["rows"][1][0] == 0.5);
  CHECK(j["rows"][0][1].get<double>() == 1.0 / 3.0);

  std::stringstream bin;
  t.write_binary(bin, meta);
  nlohmann::json back_meta;
  const auto back = Table::read_binary(bin, &back_meta);
  CHECK(back.columns == t.columns);
  CHECK(back.rows == t.rows);
  CHECK(back_meta == meta);

  std::stringstream bad("XXXX");
  CHECK_THROWS_AS(Table::read_binary(bad), ConfigError);
  std::string cut = [&] {
    std::stringstream s;
    t.write_binary(s, meta);
    return s.str();
  }();
  cut.resize(cut.size() - 3);
  std::stringstream truncated(cut);
  CHECK_THROWS_AS(Table::read_binary(truncated), ConfigError);

  Table w;
  w.columns = {"a"};
  CHECK_THROWS_AS(w.add({1.0, 2.0}), ConfigError);
}

TEST_CASE("artifact sink layout") {
  const auto root = scratch("sink");
  const nlohmann::json cfg = {{"command", "demo"}, {"eps", 0.01}, {"seed", 5}};
  ArtifactSink sink(root, "demo", cfg, 5, Format::bin);
  CHECK(sink.dir() == root / "demo" / config_hash(cfg));
  const auto tp = sink.write_table("paths", sample_table());
  CHECK(tp.filename() == "paths.bin");
  const auto jp = sink.write_json("report", {{"value", 1.5}});
  sink.finish({{"rows", 2}});

  std::ifstream is(tp, std::ios::binary);
  nlohmann::json meta;
  Table::read_binary(is, &meta);
  CHECK(meta["cfg_hash"] == sink.hash());
  CHECK(meta["seed"] == 5);
  CHECK(meta["config"] == cfg);

  const auto report = nlohmann::json::parse(slurp(jp));
  CHECK(report["result"]["value"] == 1.5);
  CHECK(report["cfg_hash"] == sink.hash());

  const auto manifest = nlohmann::json::parse(slurp(sink.dir() / "manifest.json"));
  CHECK(manifest["files"] == nlohmann::json::array({"paths.bin", "report.json"}));
  CHECK(manifest["summary"]["rows"] == 2);
  CHECK(manifest.contains("created_at"));
  CHECK(nlohmann::json::parse(slurp(sink.dir() / "config.json")) == cfg);
  fs::remove_all(root);
}
