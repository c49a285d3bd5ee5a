#include "commands.hpp"
#include "run_config.hpp"

#include "cellflow/parallel.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using cellflow::cli::RunConfig;

struct CommonFlags {
  std::optional<std::string> hamiltonian;
  std::optional<double> eps;
  std::optional<double> alpha;
  std::optional<double> delta;
  std::optional<long long> seed;
  std::optional<long long> n_paths;
  std::optional<std::string> out;
  std::optional<unsigned> workers;
  std::optional<std::string> format;
  bool json = false;
  std::optional<std::string> config;
  std::vector<std::string> sets;
  bool quick = false;
  std::vector<int> only;
};

void add_common(CLI::App* app, CommonFlags& f, const nlohmann::json& keys) {
  auto has = [&](const char* k) { return keys.contains(k); };
  app->add_option("--config", f.config, "JSON config with flat dotted keys");
  app->add_option("--set", f.sets, "Override one config key, key=value (repeatable)");
  app->add_option("--hamiltonian", f.hamiltonian, "Built-in name (sin_sin, skewed:<beta>, zero) or JSON file");
  if (has("eps")) app->add_option("--eps", f.eps, "Molecular diffusivity epsilon");
  if (has("alpha")) app->add_option("--alpha", f.alpha, "Time-scale exponent alpha in (0, 1)");
  if (has("delta")) app->add_option("--delta", f.delta, "Upcrossing level delta in graph units");
  if (has("seed")) app->add_option("--seed", f.seed, "Root seed");
  if (has("n_paths")) app->add_option("--n-paths", f.n_paths, "Number of sample paths");
  app->add_option("--out", f.out, "Output root (default: $CELLFLOW_OUT or out)");
  app->add_option("--workers", f.workers, "Worker threads (default: available parallelism)");
  app->add_option("--format", f.format, "Table format")->check(CLI::IsMember({"csv", "json", "bin"}));
  app->add_flag("--json", f.json, "Same as --format json");
}

RunConfig build_config(const std::string& command, const CommonFlags& f) {
  RunConfig rc;
  rc.command = command;
  rc.values = RunConfig::defaults(command);
  if (f.config) rc.merge(cellflow::cli::load_config_file(*f.config), *f.config);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw cellflow::ConfigError("--set expects key=value, got '" + s + "'");
    rc.set(s.substr(0, eq), cellflow::cli::parse_value(s.substr(eq + 1)));
  }
  if (f.hamiltonian) rc.set("hamiltonian", *f.hamiltonian);
  if (f.eps) rc.set("eps", *f.eps);
  if (f.alpha) rc.set("alpha", *f.alpha);
  if (f.delta) rc.set("delta", *f.delta);
  if (f.seed) rc.set("seed", *f.seed);
  if (f.n_paths) rc.set("n_paths", *f.n_paths);
  std::optional<std::string> format = f.format;
  if (f.json) format = "json";
  // Commands whose output is always JSON accept the format flag and ignore it.
  if (format && rc.values.contains("format")) rc.set("format", *format);
  if (command == "verify-all") {
    if (f.quick) rc.set("verify.quick", true);
    if (!f.only.empty()) rc.set("verify.only", f.only);
  }
  rc.out_root = f.out ? std::filesystem::path(*f.out) : cellflow::default_output_root();
  rc.workers = f.workers ? std::max(1u, *f.workers) : cellflow::default_workers();
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cellular-flow diffusion: coefficients, simulation, estimation and solvers"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every command");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"coeffs", "Edge coefficients of the limiting graph process"},
      {"simulate", "Sample paths of the rescaled diffusion"},
      {"crossings", "Stopping times kappa_n and mu_n along sample paths"},
      {"estimate-q", "Estimate Q and exit probabilities from upcrossing cycles"},
      {"celldiff", "Effective diffusivity from the cell problem"},
      {"solve-fpde", "Fractional heat equation by Mittag-Leffler and L1 routes"},
      {"solve-coupled", "Coupled plane-graph system by Fourier and Crank-Nicolson"},
      {"fk-sample", "Marginals of the limiting fractional kinetic process"},
      {"verify-all", "Acceptance suite with Holm correction"},
  };
  std::vector<CommonFlags> flags(commands.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, commands[i].second);
    add_common(sub, flags[i], RunConfig::defaults(commands[i].first));
    if (commands[i].first == "verify-all") {
      sub->add_flag("--quick", flags[i].quick, "Reduced sample sizes");
      sub->add_option("--only", flags[i].only, "Run only these criteria")->delimiter(',');
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cellflow::cli::kExitUsage;
  }

  for (std::size_t i = 0; i < commands.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    try {
      const RunConfig rc = build_config(commands[i].first, flags[i]);
      return cellflow::cli::dispatch(rc, std::cout);
    } catch (const cellflow::ConfigError& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return cellflow::cli::kExitUsage;
    } catch (const cellflow::DomainError& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return cellflow::cli::kExitUsage;
    } catch (const cellflow::ResolutionError& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return cellflow::cli::kExitUsage;
    } catch (const cellflow::NumericalError& e) {
      std::cerr << "numerical alarm: " << e.what() << "\n";
      return cellflow::cli::kExitNumerical;
    } catch (const cellflow::CoefficientQualityError& e) {
      std::cerr << "numerical alarm: " << e.what() << "\n";
      return cellflow::cli::kExitNumerical;
    } catch (const cellflow::StatisticalError& e) {
      std::cerr << "statistical failure: " << e.what() << "\n";
      return cellflow::cli::kExitStatistical;
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "configuration error: " << e.what() << "\n";
      return cellflow::cli::kExitUsage;
    }
  }
  return cellflow::cli::kExitUsage;
}
