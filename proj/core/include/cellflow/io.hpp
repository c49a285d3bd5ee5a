#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace cellflow {

enum class Format { csv, json, bin };

Format parse_format(const std::string& s);
std::string to_string(Format f);

// 16 hex digits of FNV-1a over the compact dump of cfg (keys sorted).
std::string config_hash(const nlohmann::json& cfg);

// Flat {"a.b": v} <-> nested {"a": {"b": v}}.
nlohmann::json flatten(const nlohmann::json& nested);
nlohmann::json unflatten(const nlohmann::json& flat);

// CELLFLOW_OUT when set and nonempty, otherwise "out".
std::filesystem::path default_output_root();

// Numeric table written as CSV, JSON or the binary frame.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  void add(std::vector<double> row);
  void write_csv(std::ostream& os, const nlohmann::json& meta) const;
  void write_json(std::ostream& os, const nlohmann::json& meta) const;
  // Magic "CFLT", u32 version, u64 meta length, meta JSON, u64 columns,
  // column names (u64 length + bytes each), u64 rows, row-major f64.
  void write_binary(std::ostream& os, const nlohmann::json& meta) const;
  static Table read_binary(std::istream& is, nlohmann::json* meta = nullptr);
};

// Output directory <root>/<command>/<cfg hash>/ with every artifact carrying
// the hash, seed and config. Only manifest.json holds a timestamp.
class ArtifactSink {
 public:
  ArtifactSink(const std::filesystem::path& root, const std::string& command, const nlohmann::json& cfg,
               std::uint64_t seed, Format format);

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }
  nlohmann::json meta() const;

  std::filesystem::path write_table(const std::string& stem, const Table& table);
  std::filesystem::path write_json(const std::string& stem, const nlohmann::json& payload);
  // Writes manifest.json (config, hash, seed, files, created_at) and config.json.
  // timing holds wall-clock data; like created_at it is not reproducible.
  void finish(const nlohmann::json& summary = nlohmann::json::object(),
              const nlohmann::json& timing = nlohmann::json());

 private:
  std::filesystem::path dir_;
  std::string command_;
  nlohmann::json cfg_;
  std::string hash_;
  std::uint64_t seed_;
  Format format_;
  std::vector<std::string> files_;
};

}  // namespace cellflow
