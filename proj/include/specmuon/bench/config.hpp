#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "specmuon/baselines.hpp"
#include "specmuon/errors.hpp"
#include "specmuon/muon.hpp"
#include "specmuon/problem_spec.hpp"
#include "specmuon/sav.hpp"
#include "specmuon/specmuon.hpp"

namespace specmuon::bench {

/// One optimizer entry: registered name, a file-safe label and the
/// hyperparameters as written in the config.
struct OptimizerSpec {
  std::string name;
  std::string label;
  Json params = Json::object();
};

struct RunConfig {
  ProblemSpec problem;
  std::vector<OptimizerSpec> optimizers;
  std::size_t iterations = 100;
  std::vector<std::uint64_t> seeds{0};
  // Defaults for SpecMuon entries that do not set their own.
  std::optional<std::string> mode;
  std::optional<int> predictor_power;
  std::string output_dir = "results";
  bool check_theorems = true;
  bool plot = false;
  bool record_time = false;
  // iterations-to-threshold uses f - f* <= threshold * (f0 - f*).
  double threshold = 1e-6;
};

inline const std::vector<std::string>& registered_optimizers() {
  static const std::vector<std::string> names{"gd", "adam", "adamw", "muon", "sav", "rsav", "specmuon"};
  return names;
}

namespace detail {

inline const std::set<std::string>& allowed_keys(const std::string& name) {
  static const std::set<std::string> gd{"name", "label", "lr"};
  static const std::set<std::string> adam{"name", "label", "lr", "betas", "beta1", "beta2", "eps", "weight_decay"};
  static const std::set<std::string> muon{"name", "label", "lr", "momentum", "ns_iters"};
  static const std::set<std::string> sav{"name", "label", "lr", "kappa", "psi", "xi_form"};
  static const std::set<std::string> spec{"name",  "label", "lr",   "momentum",        "rtop",   "k_r",
                                          "sav_eta", "psi", "kappa", "eps", "mode", "predictor_power", "xi_form"};
  if (name == "gd") return gd;
  if (name == "adam" || name == "adamw") return adam;
  if (name == "muon") return muon;
  if (name == "sav" || name == "rsav") return sav;
  return spec;
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

inline XiCoefficients parse_xi_form(const Json& j, const std::string& where) {
  const auto s = get_or<std::string>(j, "xi_form", "inequality", where);
  if (s == "inequality") return XiCoefficients::kInequality;
  if (s == "as_printed") return XiCoefficients::kAsPrinted;
  throw ConfigError(where + ": xi_form must be 'inequality' or 'as_printed'");
}

}  // namespace detail

inline SpecMuonConfig specmuon_config(const OptimizerSpec& spec) {
  const std::string where = "optimizer '" + spec.label + "'";
  const Json& j = spec.params;
  if (j.contains("rtop") && j.contains("k_r")) throw ConfigError(where + ": set rtop or k_r, not both");
  const auto mode = detail::get_or<std::string>(j, "mode", "practical", where);
  SpecMuonConfig c;
  if (mode == "theory") {
    c = SpecMuonConfig::theory(3e-3, 6);
  } else if (mode != "practical") {
    throw ConfigError(where + ": mode must be 'theory' or 'practical'");
  }
  c.lr = detail::get_or(j, "lr", c.lr, where);
  c.momentum = detail::get_or(j, "momentum", c.momentum, where);
  const auto k = detail::get_or<std::int64_t>(j, "rtop", detail::get_or<std::int64_t>(j, "k_r", 6, where), where);
  if (k < 0) throw ConfigError(where + ": rtop must be >= 0");
  c.k_r = static_cast<std::size_t>(k);
  c.sav_eta = detail::get_or(j, "sav_eta", c.sav_eta, where);
  c.psi = detail::get_or(j, "psi", c.psi, where);
  c.kappa = detail::get_or(j, "kappa", c.kappa, where);
  c.eps = detail::get_or(j, "eps", c.eps, where);
  if (j.contains("predictor_power")) c.predictor_power = detail::get_or<int>(j, "predictor_power", 0, where);
  c.xi_form = detail::parse_xi_form(j, where);
  return c;
}

/// Builds a fresh optimizer; invalid hyperparameters surface as ConfigError.
inline std::unique_ptr<Optimizer> make_optimizer(const OptimizerSpec& spec) {
  const std::string where = "optimizer '" + spec.label + "'";
  const Json& j = spec.params;
  try {
    if (spec.name == "gd") return std::make_unique<GdOptimizer>(detail::get_or(j, "lr", 0.1, where));
    if (spec.name == "adam" || spec.name == "adamw") {
      AdamConfig c;
      c.lr = detail::get_or(j, "lr", c.lr, where);
      if (j.contains("betas")) {
        const auto b = detail::get_or<std::vector<double>>(j, "betas", {}, where);
        if (b.size() != 2) throw ConfigError(where + ": betas must have two entries");
        c.beta1 = b[0];
        c.beta2 = b[1];
      }
      c.beta1 = detail::get_or(j, "beta1", c.beta1, where);
      c.beta2 = detail::get_or(j, "beta2", c.beta2, where);
      c.eps = detail::get_or(j, "eps", c.eps, where);
      c.weight_decay = detail::get_or(j, "weight_decay", c.weight_decay, where);
      if (spec.name == "adam" && c.weight_decay != 0.0)
        throw ConfigError(where + ": weight_decay needs adamw");
      return std::make_unique<AdamOptimizer>(c, spec.name == "adamw");
    }
    if (spec.name == "muon") {
      MuonConfig c;
      c.lr = detail::get_or(j, "lr", c.lr, where);
      c.momentum = detail::get_or(j, "momentum", c.momentum, where);
      c.ns_iters = detail::get_or(j, "ns_iters", c.ns_iters, where);
      return std::make_unique<MuonOptimizer>(c);
    }
    if (spec.name == "sav" || spec.name == "rsav") {
      SavConfig c;
      c.relax = spec.name == "rsav";
      c.lr = detail::get_or(j, "lr", c.lr, where);
      c.kappa = detail::get_or(j, "kappa", c.kappa, where);
      c.psi = detail::get_or(j, "psi", c.psi, where);
      c.xi_form = detail::parse_xi_form(j, where);
      return std::make_unique<SavOptimizer>(c);
    }
    if (spec.name == "specmuon") return std::make_unique<SpecMuonOptimizer>(specmuon_config(spec));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  throw ConfigError("unknown optimizer '" + spec.name + "'");
}

inline OptimizerSpec optimizer_spec_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
    throw ConfigError("optimizers: each entry needs a string 'name'");
  OptimizerSpec spec;
  spec.name = j["name"].get<std::string>();
  const auto& names = registered_optimizers();
  if (std::find(names.begin(), names.end(), spec.name) == names.end())
    throw ConfigError("unknown optimizer '" + spec.name + "'");
  spec.label = detail::get_or<std::string>(j, "label", spec.name, "optimizer '" + spec.name + "'");
  if (spec.label.empty() || spec.label.find_first_not_of("abcdefghijklmnopqrstuvwxyz"
                                                         "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-.") != std::string::npos)
    throw ConfigError("optimizer '" + spec.name + "': label must be non-empty and use [A-Za-z0-9_.-]");
  const auto& allowed = detail::allowed_keys(spec.name);
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("optimizer '" + spec.label + "': unknown key '" + key + "'");
    if (key != "name" && key != "label") spec.params[key] = value;
  }
  make_optimizer(spec);  // validate eagerly
  return spec;
}

inline RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  specmuon::detail::require_known_keys(j,
                                       {"problem", "optimizers", "iterations", "seeds", "mode", "predictor_power",
                                        "output_dir", "check_theorems", "plot", "record_time", "threshold"},
                                       "config");
  const std::string where = "config";
  RunConfig cfg;
  if (!j.contains("problem")) throw ConfigError("config: missing 'problem'");
  cfg.problem = problem_spec_from_json(j["problem"]);
  const auto iters = detail::get_or<std::int64_t>(j, "iterations", 100, where);
  if (iters < 1) throw ConfigError("config: iterations must be >= 1");
  cfg.iterations = static_cast<std::size_t>(iters);
  cfg.seeds = detail::get_or(j, "seeds", cfg.seeds, where);
  if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  if (j.contains("mode")) {
    cfg.mode = detail::get_or<std::string>(j, "mode", "", where);
    if (*cfg.mode != "theory" && *cfg.mode != "practical")
      throw ConfigError("config: mode must be 'theory' or 'practical'");
  }
  if (j.contains("predictor_power")) cfg.predictor_power = detail::get_or<int>(j, "predictor_power", 0, where);
  cfg.output_dir = detail::get_or(j, "output_dir", cfg.output_dir, where);
  cfg.check_theorems = detail::get_or(j, "check_theorems", cfg.check_theorems, where);
  cfg.plot = detail::get_or(j, "plot", cfg.plot, where);
  cfg.record_time = detail::get_or(j, "record_time", cfg.record_time, where);
  cfg.threshold = detail::get_or(j, "threshold", cfg.threshold, where);
  if (!(cfg.threshold > 0.0)) throw ConfigError("config: threshold must be > 0");

  if (!j.contains("optimizers") || !j["optimizers"].is_array() || j["optimizers"].empty())
    throw ConfigError("config: 'optimizers' must be a non-empty list");
  std::set<std::string> labels;
  for (const auto& entry : j["optimizers"]) {
    Json e = entry;
    if (e.is_object() && e.value("name", "") == "specmuon") {
      if (cfg.mode && !e.contains("mode")) e["mode"] = *cfg.mode;
      if (cfg.predictor_power && !e.contains("predictor_power")) e["predictor_power"] = *cfg.predictor_power;
    }
    OptimizerSpec spec = optimizer_spec_from_json(e);
    if (!labels.insert(spec.label).second)
      throw ConfigError("config: duplicate optimizer label '" + spec.label + "'; set a distinct 'label'");
    cfg.optimizers.push_back(std::move(spec));
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace specmuon::bench
