#pragma once

#include "cellflow/hamiltonian.hpp"
#include "cellflow/io.hpp"
#include "cellflow/sde_engine.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace cellflow::cli {

// Flat dotted-key configuration: command defaults, then the --config file,
// then flags. Keys that do not change results (workers, out) are kept out of
// the hashed config.
struct RunConfig {
  std::string command;
  nlohmann::json values = nlohmann::json::object();
  std::filesystem::path out_root;
  unsigned workers = 1;

  static nlohmann::json defaults(const std::string& command);

  // Layer src over values; unknown keys are a configuration error.
  void merge(const nlohmann::json& src, const std::string& origin);
  void set(const std::string& key, const nlohmann::json& value);

  double num(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::string str(const std::string& key) const;
  std::vector<double> list(const std::string& key) const;
  bool flag(const std::string& key) const;
  const nlohmann::json& raw(const std::string& key) const;

  std::uint64_t seed() const { return u64("seed"); }
  Format format() const { return parse_format(str("format")); }
  HamiltonianField field() const;
  SimConfig sim(const std::string& prefix = "sim") const;
};

// Reads a flat or nested JSON object from disk.
nlohmann::json load_config_file(const std::filesystem::path& path);

// "1,2" or "[1, 2]" -> JSON array; numbers and booleans are parsed, anything
// else stays a string.
nlohmann::json parse_value(const std::string& text);

}  // namespace cellflow::cli
