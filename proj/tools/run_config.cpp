#include "run_config.hpp"

#include <fstream>
#include <sstream>

namespace cellflow::cli {

nlohmann::json RunConfig::defaults(const std::string& command) {
  const nlohmann::json sim = {{"eps", 1e-3},          {"alpha", 0.5},        {"seed", 1},
                              {"n_paths", 100},       {"sim.horizon", 1.0},  {"sim.dt_safety", 5.0},
                              {"sim.dt_max", 0.1},    {"sim.record_stride", 200}, {"sim.x0", "saddle"}};
  const nlohmann::json fpde = {{"fpde.n", 64},
                               {"fpde.theta0", "smooth"},
                               {"fpde.q", {1.0, 0.0, 1.0}},
                               {"fpde.r0", nullptr},
                               {"fpde.times", {0.25, 0.5, 1.0}}};
  nlohmann::json d = {{"hamiltonian", "sin_sin"}, {"format", "csv"}};
  if (command == "coeffs") {
    // Coefficients are always JSON, so the format is not part of the run.
    d.erase("format");
    d.update({{"coeffs.h_min", 1e-6}, {"coeffs.h_max", 1e-2}, {"coeffs.n_levels", 25}, {"coeffs.min_r2", 0.999}});
  } else if (command == "simulate") {
    d.update(sim);
  } else if (command == "crossings") {
    d.update(sim);
    d.update({{"delta", 0.1}, {"sim.dt_safety", 5.0}, {"n_paths", 10}});
  } else if (command == "estimate-q") {
    d.update(sim);
    d.update({{"delta", 0.1},
              {"n_paths", 1000},
              {"sim.horizon", 4.0},
              {"sim.dt_safety", 5.0},
              {"sim.x0", "separatrix"},
              {"estimate.n_boot", 400}});
  } else if (command == "celldiff") {
    d.update({{"eps", 1e-2},
              {"celldiff.eps_list", nlohmann::json::array()},
              {"celldiff.grid", 0},
              {"celldiff.tol", 1e-10},
              {"celldiff.n_band", 0.0},
              {"celldiff.dump_corrector", false}});
  } else if (command == "solve-fpde") {
    d.update(fpde);
    d.update({{"fpde.steps", 512}, {"fpde.alarm_tol", 1e-3}});
  } else if (command == "solve-coupled") {
    d.update(fpde);
    d.update({{"fpde.n", 32}, {"coupled.steps", 400}, {"coupled.edge_points", 400}, {"coupled.y_max", 0.0}});
  } else if (command == "fk-sample") {
    d.update({{"seed", 1}, {"n_paths", 1000}, {"fk.times", {0.25, 0.5, 1.0}}, {"fk.dt", 1e-4}, {"fpde.q", {1.0, 0.0, 1.0}}});
  } else if (command == "verify-all") {
    d.erase("format");
    d.update({{"seed", 1}, {"verify.quick", false}, {"verify.only", nlohmann::json::array()}});
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  return d;
}

void RunConfig::merge(const nlohmann::json& src, const std::string& origin) {
  if (!src.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  for (const auto& [k, v] : src.items()) {
    if (k == "command") {
      if (v != command) throw ConfigError(origin + ": config was written by '" + v.dump() + "', not '" + command + "'");
      continue;
    }
    if (!values.contains(k)) throw ConfigError(origin + ": unknown key '" + k + "' for " + command);
    values[k] = v;
  }
}

void RunConfig::set(const std::string& key, const nlohmann::json& value) {
  if (!values.contains(key)) throw ConfigError("unknown key '" + key + "' for " + command);
  values[key] = value;
}

const nlohmann::json& RunConfig::raw(const std::string& key) const {
  if (!values.contains(key)) throw ConfigError("missing config key '" + key + "'");
  return values.at(key);
}

double RunConfig::num(const std::string& key) const {
  const auto& v = raw(key);
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const auto& v = raw(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config key '" + key + "' must be a nonnegative integer");
  return v.get<std::uint64_t>();
}

std::string RunConfig::str(const std::string& key) const {
  const auto& v = raw(key);
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

std::vector<double> RunConfig::list(const std::string& key) const {
  const auto& v = raw(key);
  if (v.is_number()) return {v.get<double>()};
  if (!v.is_array()) throw ConfigError("config key '" + key + "' must be a list of numbers");
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number()) throw ConfigError("config key '" + key + "' must be a list of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

bool RunConfig::flag(const std::string& key) const {
  const auto& v = raw(key);
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be true or false");
  return v.get<bool>();
}

HamiltonianField RunConfig::field() const {
  const std::string spec = str("hamiltonian");
  const std::filesystem::path p(spec);
  if (p.extension() == ".json" || spec.find('/') != std::string::npos) {
    if (!std::filesystem::exists(p)) throw ConfigError("hamiltonian file not found: " + spec);
    std::ifstream is(p);
    try {
      return HamiltonianField::from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("hamiltonian file " + spec + ": " + e.what());
    }
  }
  return HamiltonianField::from_spec(spec);
}

SimConfig RunConfig::sim(const std::string& prefix) const {
  SimConfig c;
  c.epsilon = num("eps");
  c.alpha = num("alpha");
  c.seed = seed();
  c.n_paths = u64("n_paths");
  c.horizon = num(prefix + ".horizon");
  c.dt_safety = num(prefix + ".dt_safety");
  c.dt_max = num(prefix + ".dt_max");
  c.record_stride = u64(prefix + ".record_stride");
  c.validate();
  return c;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file " + path.string() + " must hold a JSON object");
  // Artifacts and manifests carry the run config under "config".
  if (j.contains("config") && j.contains("cfg_hash")) {
    nlohmann::json inner = j.at("config");
    j = std::move(inner);
  }
  nlohmann::json flat = nlohmann::json::object();
  for (const auto& [k, v] : j.items()) {
    if (v.is_object()) {
      const nlohmann::json sub = flatten(v);
      for (const auto& [kk, vv] : sub.items()) flat[k + "." + kk] = vv;
    } else {
      flat[k] = v;
    }
  }
  return flat;
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
  }
  if (text.find(',') != std::string::npos) {
    nlohmann::json arr = nlohmann::json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) arr.push_back(parse_value(item));
    return arr;
  }
  return text;
}

}  // namespace cellflow::cli
