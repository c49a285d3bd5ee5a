// One PASS/FAIL line per acceptance criterion. Criteria 1-14 run through the
// verification suite at full size; 15 drives the command line tool.
#include "cellflow/verify.hpp"

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace cellflow;

namespace {

// Wall-clock budget per criterion in seconds.
const std::map<int, double> kBudget{{1, 1},    {2, 10},   {3, 300},  {4, 600}, {5, 300},  {6, 600},  {7, 600},
                                    {8, 900},  {9, 600},  {10, 120}, {11, 5},  {12, 60},  {13, 120}, {14, 900}};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int run(const std::string& cli, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + cli + "\" " + args + " >>\"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Compares two run directories: every artifact byte for byte, the manifest
// without its timestamp and wall-clock timings.
std::string compare_dirs(const fs::path& a, const fs::path& b) {
  if (!fs::exists(b)) return "missing " + b.string();
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (!fs::exists(b / name)) return "missing " + (b / name).string();
    if (name == "manifest.json") {
      auto ja = nlohmann::json::parse(slurp(e.path())), jb = nlohmann::json::parse(slurp(b / name));
      for (const char* k : {"created_at", "timing"}) {
        ja.erase(k);
        jb.erase(k);
      }
      if (ja != jb) return "manifest differs in " + b.string();
    } else if (slurp(e.path()) != slurp(b / name)) {
      return name.string() + " differs";
    }
    ++n;
  }
  for (const auto& e : fs::directory_iterator(b))
    if (!fs::exists(a / e.path().filename())) return "extra " + e.path().string();
  return n > 0 ? "" : "empty run directory " + a.string();
}

struct Rerun {
  std::string command;
  std::string args;
};

// Every command run once from flags, then again from its config.json into a
// fresh root.
bool determinism(const std::string& cli, const fs::path& scratch, std::string& detail) {
  const fs::path root_a = scratch / "a", root_b = scratch / "b", log = scratch / "cli.log";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  const std::vector<Rerun> runs{
      {"coeffs", ""},
      {"simulate", "--eps 1e-3 --alpha 0.5 --n-paths 100 --seed 7"},
      {"crossings", "--eps 1e-2 --n-paths 3 --seed 2 --set sim.horizon=0.5 --format json"},
      {"estimate-q", "--eps 1e-2 --n-paths 200 --seed 3 --set estimate.n_boot=100"},
      {"celldiff", "--eps 1e-2 --set celldiff.n_band=4 --format bin"},
      {"solve-fpde", "--set fpde.n=16 --set fpde.steps=256"},
      {"solve-coupled", "--set fpde.n=8 --set coupled.steps=100 --set coupled.edge_points=100"},
      {"fk-sample", "--n-paths 200 --seed 4 --format bin"},
      {"verify-all", "--only 1,2,11"},
  };
  std::size_t checked = 0;
  for (const auto& r : runs) {
    const int rc = run(cli, r.command + " " + r.args + " --out \"" + root_a.string() + "\"", log);
    if (rc != 0) {
      detail = r.command + " exited with " + std::to_string(rc);
      return false;
    }
    for (const auto& e : fs::directory_iterator(root_a / r.command)) {
      const auto cfg = e.path() / "config.json";
      const int rb = run(cli, r.command + " --config \"" + cfg.string() + "\" --out \"" + root_b.string() + "\"", log);
      if (rb != 0) {
        detail = r.command + " re-run exited with " + std::to_string(rb);
        return false;
      }
      const std::string diff = compare_dirs(e.path(), root_b / r.command / e.path().filename());
      if (!diff.empty()) {
        detail = r.command + ": " + diff;
        return false;
      }
      ++checked;
    }
  }
  // Worker count must not change results.
  const fs::path root_c = scratch / "c";
  if (run(cli, "simulate --eps 1e-3 --alpha 0.5 --n-paths 100 --seed 7 --workers 3 --out \"" + root_c.string() + "\"",
          log) != 0) {
    detail = "simulate with 3 workers failed";
    return false;
  }
  for (const auto& e : fs::directory_iterator(root_c / "simulate")) {
    const std::string diff = compare_dirs(e.path(), root_a / "simulate" / e.path().filename());
    if (!diff.empty()) {
      detail = "workers: " + diff;
      return false;
    }
  }
  detail = std::to_string(checked) + " commands reproduced byte for byte";
  return checked == runs.size();
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  fs::path scratch = fs::temp_directory_path() / "cellflow_acceptance";
  std::uint64_t seed = 1;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string k = argv[i];
    if (k == "--cli") cli = argv[i + 1];
    else if (k == "--scratch") scratch = argv[i + 1];
    else if (k == "--seed") seed = std::stoull(argv[i + 1]);
    else {
      std::cerr << "usage: acceptance --cli <path> [--scratch <dir>] [--seed <n>]\n";
      return 2;
    }
  }
  if (cli.empty()) {
    std::cerr << "usage: acceptance --cli <path> [--scratch <dir>] [--seed <n>]\n";
    return 2;
  }

  const SuiteConfig cfg = SuiteConfig::full(seed, 1);
  using Clock = std::chrono::steady_clock;
  auto last = Clock::now();
  std::map<int, double> wall;
  const SuiteResult res = run_suite(HamiltonianField::sin_sin(), cfg, [&](const TestReport& r) {
    const auto now = Clock::now();
    wall[r.criterion] = std::chrono::duration<double>(now - last).count();
    last = now;
    std::cout << "  " << r.summary() << std::endl;
  });

  bool all = true;
  std::cout << "\n";
  for (std::size_t k = 0; k < res.reports.size(); ++k) {
    const auto& r = res.reports[k];
    const double budget = kBudget.at(r.criterion);
    const bool in_time = r.seconds <= budget;
    const bool pass = res.corrected_pass[k] && in_time;
    all = all && pass;
    char line[256];
    std::snprintf(line, sizeof line, "%s [#%d] %s (%.1f s of %.0f s budget, %.1f s wall incl. shared setup)%s",
                  pass ? "PASS" : "FAIL", r.criterion, r.name.c_str(), r.seconds, budget, wall[r.criterion],
                  in_time ? "" : " over budget");
    std::cout << line << std::endl;
  }

  std::string detail;
  const bool det = determinism(cli, scratch, detail);
  all = all && det;
  std::cout << (det ? "PASS" : "FAIL") << " [#15] determinism: " << detail << std::endl;

  std::ofstream(scratch / "acceptance.json") << res.to_json().dump(1) << "\n";
  return all ? 0 : 1;
}
