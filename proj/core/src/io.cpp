#include "cellflow/io.hpp"

#include "cellflow/common.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <ostream>

namespace cellflow {

namespace {

constexpr char kTableMagic[4] = {'C', 'F', 'L', 'T'};
constexpr std::uint32_t kTableVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw ConfigError("binary table: truncated input");
  return v;
}

std::string read_string(std::istream& is) {
  const auto len = get<std::uint64_t>(is);
  if (len > (1u << 30)) throw ConfigError("binary table: corrupt string length");
  std::string s(len, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(len))) throw ConfigError("binary table: truncated input");
  return s;
}

void flatten_into(const nlohmann::json& j, const std::string& prefix, nlohmann::json& out) {
  if (j.is_object() && !j.empty()) {
    for (const auto& [k, v] : j.items()) flatten_into(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  if (s == "bin") return Format::bin;
  throw ConfigError("unknown format '" + s + "' (expected csv, json or bin)");
}

std::string to_string(Format f) {
  switch (f) {
    case Format::csv: return "csv";
    case Format::json: return "json";
    case Format::bin: return "bin";
  }
  return "csv";
}

std::string config_hash(const nlohmann::json& cfg) {
  const std::string s = cfg.dump();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

nlohmann::json flatten(const nlohmann::json& nested) {
  nlohmann::json out = nlohmann::json::object();
  if (!nested.is_object()) throw ConfigError("config must be a JSON object");
  flatten_into(nested, "", out);
  return out;
}

nlohmann::json unflatten(const nlohmann::json& flat) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : flat.items()) out[nlohmann::json::json_pointer("/" + [&] {
    std::string p = k;
    for (auto& c : p)
      if (c == '.') c = '/';
    return p;
  }())] = v;
  return out;
}

std::filesystem::path default_output_root() {
  const char* env = std::getenv("CELLFLOW_OUT");
  if (env && *env) return env;
  return "out";
}

void Table::add(std::vector<double> row) {
  if (row.size() != columns.size()) throw ConfigError("table: row width does not match the columns");
  rows.push_back(std::move(row));
}

void Table::write_csv(std::ostream& os, const nlohmann::json& meta) const {
  for (const auto& [k, v] : meta.items()) os << "# " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
  for (std::size_t c = 0; c < columns.size(); ++c) os << (c ? "," : "") << columns[c];
  os << "\n";
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) os << (c ? "," : "") << format_number(r[c]);
    os << "\n";
  }
}

void Table::write_json(std::ostream& os, const nlohmann::json& meta) const {
  nlohmann::json j = meta;
  j["columns"] = columns;
  j["rows"] = rows;
  os << j.dump(1) << "\n";
}

void Table::write_binary(std::ostream& os, const nlohmann::json& meta) const {
  os.write(kTableMagic, 4);
  put(os, kTableVersion);
  const std::string m = meta.dump();
  put(os, static_cast<std::uint64_t>(m.size()));
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  put(os, static_cast<std::uint64_t>(columns.size()));
  for (const auto& c : columns) {
    put(os, static_cast<std::uint64_t>(c.size()));
    os.write(c.data(), static_cast<std::streamsize>(c.size()));
  }
  put(os, static_cast<std::uint64_t>(rows.size()));
  for (const auto& r : rows)
    for (double v : r) put(os, v);
}

Table Table::read_binary(std::istream& is, nlohmann::json* meta) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTableMagic, 4) != 0) throw ConfigError("binary table: bad magic");
  if (get<std::uint32_t>(is) != kTableVersion) throw ConfigError("binary table: unsupported version");
  const std::string m = read_string(is);
  if (meta) *meta = nlohmann::json::parse(m);
  Table t;
  const auto nc = get<std::uint64_t>(is);
  for (std::uint64_t c = 0; c < nc; ++c) t.columns.push_back(read_string(is));
  const auto nr = get<std::uint64_t>(is);
  for (std::uint64_t r = 0; r < nr; ++r) {
    std::vector<double> row(nc);
    for (auto& v : row) v = get<double>(is);
    t.rows.push_back(std::move(row));
  }
  return t;
}

ArtifactSink::ArtifactSink(const std::filesystem::path& root, const std::string& command, const nlohmann::json& cfg,
                           std::uint64_t seed, Format format)
    : command_(command), cfg_(cfg), hash_(config_hash(cfg)), seed_(seed), format_(format) {
  dir_ = root / command / hash_;
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message());
}

nlohmann::json ArtifactSink::meta() const {
  return {{"command", command_}, {"cfg_hash", hash_}, {"seed", seed_}, {"config", cfg_}};
}

std::filesystem::path ArtifactSink::write_table(const std::string& stem, const Table& table) {
  const std::filesystem::path p = dir_ / (stem + "." + to_string(format_));
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + p.string());
  switch (format_) {
    case Format::csv: table.write_csv(os, meta()); break;
    case Format::json: table.write_json(os, meta()); break;
    case Format::bin: table.write_binary(os, meta()); break;
  }
  files_.push_back(p.filename().string());
  return p;
}

std::filesystem::path ArtifactSink::write_json(const std::string& stem, const nlohmann::json& payload) {
  const std::filesystem::path p = dir_ / (stem + ".json");
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + p.string());
  nlohmann::json j = meta();
  j["result"] = payload;
  os << j.dump(1) << "\n";
  files_.push_back(p.filename().string());
  return p;
}

void ArtifactSink::finish(const nlohmann::json& summary, const nlohmann::json& timing) {
  {
    std::ofstream os(dir_ / "config.json", std::ios::binary);
    os << cfg_.dump(1) << "\n";
  }
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  nlohmann::json j = meta();
  j["files"] = files_;
  j["summary"] = summary;
  j["created_at"] = stamp;
  if (!timing.is_null()) j["timing"] = timing;
  std::ofstream os(dir_ / "manifest.json", std::ios::binary);
  if (!os) throw ConfigError("cannot write manifest in " + dir_.string());
  os << j.dump(1) << "\n";
}

}  // namespace cellflow
