#pragma once

// Flat key=value run configuration. Several pairs may share a line; '#'
// starts a comment. Flags given on the command line override file values.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nlselab/errors.hpp"
#include "nlselab/initial_data.hpp"
#include "nlselab/lattice.hpp"
#include "nlselab/stepper.hpp"

namespace nlselab {

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"simulate", "drift",  "defect-order",   "symplectic-check",
                                                 "stability", "cfl",   "spectrum-check", "convergence"};
  return names;
}

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "command", "K",        "delta_x",   "r",         "lambda",    "h",      "fp_tol",  "max_iters",
      "ref_tol", "anderson", "T",         "h_values",  "epsilon",   "kappa",  "N",       "seed",
      "init",    "init_scale", "mode",    "eps_tilde", "orders",    "stride", "fd_step", "horizon_cap",
      "comparator", "tolerance"};
  return keys;
}

struct RunConfig {
  std::string command;
  GridSpec grid;
  ModelParams model;
  SolverParams solver;
  double T = 1.0;
  std::vector<double> h_values;
  double epsilon = 0.05;
  double kappa = 0.25;
  int N = 0;
  std::uint64_t seed = 0;
  InitKind init = InitKind::Bump;
  double init_scale = 1.0;
  int mode = 1;
  double eps_tilde = std::numbers::pi / 2;
  std::vector<int> orders;
  long stride = 1;
  double fd_step = 1e-5;
  long horizon_cap = 10'000'000;
  bool unmodified = false;
  double tolerance = 1e-6;

  /// Keys used by the command with their canonical values, for the manifest.
  std::map<std::string, std::string> effective;

  InitSpec init_spec() const { return InitSpec{init, init_scale, seed, mode, 0.0}; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

struct CommandKeys {
  std::vector<std::string> required;
  std::vector<std::string> optional;
};

inline const CommandKeys& keys_for(const std::string& command) {
  static const std::vector<std::string> solver = {"fp_tol", "max_iters", "anderson"};
  static const std::vector<std::string> init = {"init", "init_scale", "seed", "mode"};
  auto cat = [](std::initializer_list<std::vector<std::string>> parts) {
    std::vector<std::string> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return out;
  };
  static const std::map<std::string, CommandKeys> table = {
      {"simulate", {{"K", "delta_x", "h", "T"}, cat({{"r", "lambda", "orders", "stride", "eps_tilde"}, solver, init})}},
      {"drift", {{"K", "delta_x", "h", "T"}, cat({{"r", "lambda", "orders", "stride", "eps_tilde"}, solver, init})}},
      {"defect-order",
       {{"K", "delta_x", "h_values"}, cat({{"r", "lambda", "N", "comparator", "fp_tol", "ref_tol", "eps_tilde"}, init})}},
      {"symplectic-check", {{"K", "delta_x", "h"}, cat({{"r", "lambda", "fd_step", "tolerance"}, solver, init})}},
      {"stability",
       {{"K", "delta_x", "h", "epsilon", "kappa", "N"},
        cat({{"r", "lambda", "horizon_cap", "stride", "eps_tilde", "init", "seed", "mode"}, solver})}},
      {"cfl", {{"delta_x", "N"}, {"r", "eps_tilde"}}},
      {"spectrum-check", {{"K", "delta_x"}, {"tolerance"}}},
      {"convergence", {{"K", "delta_x", "T", "h_values"}, cat({{"r", "lambda", "ref_tol"}, solver, init})}},
  };
  const auto it = table.find(command);
  if (it == table.end()) throw ConfigError("command", "unknown command '" + command + "'");
  return it->second;
}

inline std::string default_for(const std::string& command, const std::string& key) {
  if (key == "orders") return command == "drift" ? "0,1" : "0";
  if (key == "tolerance") return command == "spectrum-check" ? "1e-10" : "1e-06";
  if (key == "stride") return command == "stability" ? "0" : "1";
  static const std::map<std::string, std::string> defaults = {
      {"r", "1"},          {"lambda", "1"},     {"fp_tol", "1e-13"},  {"max_iters", "200"},
      {"ref_tol", "1e-12"}, {"anderson", "0"},  {"N", "0"},           {"seed", "0"},
      {"init", "bump"},    {"init_scale", "1"}, {"mode", "1"},        {"eps_tilde", format_double(std::numbers::pi / 2)},
      {"fd_step", "1e-05"}, {"horizon_cap", "10000000"}, {"comparator", "modified"}};
  return defaults.at(key);
}

inline double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw ConfigError(key, "expected a finite number, got '" + text + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& text) {
  Int v = 0;
  const auto* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(key, "expected an integer, got '" + text + "'");
  return v;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

/// Reads key=value pairs from `text`. Duplicate keys keep the last value.
inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::stringstream tokens(line);
    std::string tok;
    while (tokens >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError(tok, "expected key=value, got '" + tok + "'");
      out[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  return out;
}

/// Builds a validated RunConfig from file pairs and flag overrides. Unknown
/// keys are rejected; known keys that the command does not use are ignored.
inline RunConfig parse_config(const std::map<std::string, std::string>& file,
                              const std::map<std::string, std::string>& overrides = {}) {
  std::map<std::string, std::string> raw = file;
  for (const auto& [k, v] : overrides) raw[k] = v;
  const auto& known = config_keys();
  for (const auto& [k, v] : raw)
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError(k, "unknown key '" + k + "'");

  RunConfig cfg;
  if (!raw.count("command") || raw.at("command").empty()) throw ConfigError("command", "missing required key 'command'");
  cfg.command = raw.at("command");
  const auto& spec = detail::keys_for(cfg.command);
  cfg.effective["command"] = cfg.command;

  std::map<std::string, std::string> vals;
  for (const auto& k : spec.required) {
    if (!raw.count(k)) throw ConfigError(k, "missing required key '" + k + "' for command " + cfg.command);
    vals[k] = raw.at(k);
  }
  for (const auto& k : spec.optional) vals[k] = raw.count(k) ? raw.at(k) : detail::default_for(cfg.command, k);

  auto range = [](const std::string& key, bool ok, const std::string& what) {
    if (!ok) throw ConfigError(key, "'" + key + "' " + what);
  };
  for (const auto& [key, text] : vals) {
    std::string canon;
    if (key == "K") {
      cfg.grid.K = detail::parse_int<int>(key, text);
      range(key, cfg.grid.K >= 1 && cfg.grid.K <= 4096, "must be in [1, 4096]");
      canon = std::to_string(cfg.grid.K);
    } else if (key == "delta_x") {
      cfg.grid.delta_x = detail::parse_double(key, text);
      range(key, cfg.grid.delta_x > 0.0, "must be positive");
      canon = format_double(cfg.grid.delta_x);
    } else if (key == "r") {
      cfg.model.r = detail::parse_int<int>(key, text);
      range(key, cfg.model.r >= 1 && cfg.model.r <= 16, "must be in [1, 16]");
      canon = std::to_string(cfg.model.r);
    } else if (key == "lambda") {
      cfg.model.lambda = detail::parse_int<int>(key, text);
      range(key, cfg.model.lambda >= -1 && cfg.model.lambda <= 1, "must be -1, 0 or 1");
      canon = std::to_string(cfg.model.lambda);
    } else if (key == "h") {
      cfg.solver.h = detail::parse_double(key, text);
      range(key, cfg.solver.h > 0.0, "must be positive");
      canon = format_double(cfg.solver.h);
    } else if (key == "fp_tol") {
      cfg.solver.fp_tol = detail::parse_double(key, text);
      range(key, cfg.solver.fp_tol > 0.0, "must be positive");
      canon = format_double(cfg.solver.fp_tol);
    } else if (key == "max_iters") {
      cfg.solver.max_iters = detail::parse_int<int>(key, text);
      range(key, cfg.solver.max_iters >= 1, "must be >= 1");
      canon = std::to_string(cfg.solver.max_iters);
    } else if (key == "ref_tol") {
      cfg.solver.ref_tol = detail::parse_double(key, text);
      range(key, cfg.solver.ref_tol > 0.0 && cfg.solver.ref_tol < 1.0, "must be in (0, 1)");
      canon = format_double(cfg.solver.ref_tol);
    } else if (key == "anderson") {
      cfg.solver.anderson_depth = detail::parse_int<int>(key, text);
      range(key, cfg.solver.anderson_depth >= 0 && cfg.solver.anderson_depth <= 20, "must be in [0, 20]");
      canon = std::to_string(cfg.solver.anderson_depth);
    } else if (key == "T") {
      cfg.T = detail::parse_double(key, text);
      range(key, cfg.T >= 0.0, "must be >= 0");
      canon = format_double(cfg.T);
    } else if (key == "h_values") {
      for (const auto& item : detail::split_list(text)) {
        const double h = detail::parse_double(key, item);
        range(key, h > 0.0, "entries must be positive");
        cfg.h_values.push_back(h);
      }
      range(key, cfg.h_values.size() >= 4, "needs at least 4 entries");
      for (double h : cfg.h_values) canon += (canon.empty() ? "" : ",") + format_double(h);
    } else if (key == "epsilon") {
      cfg.epsilon = detail::parse_double(key, text);
      range(key, cfg.epsilon > 0.0, "must be positive");
      canon = format_double(cfg.epsilon);
    } else if (key == "kappa") {
      cfg.kappa = detail::parse_double(key, text);
      range(key, cfg.kappa > 0.0 && cfg.kappa < 0.5, "must be in (0, 0.5)");
      canon = format_double(cfg.kappa);
    } else if (key == "N") {
      cfg.N = detail::parse_int<int>(key, text);
      const int hi = cfg.command == "cfl" ? 64 : 1;
      range(key, cfg.N >= 0 && cfg.N <= hi, "must be in [0, " + std::to_string(hi) + "]");
      canon = std::to_string(cfg.N);
    } else if (key == "seed") {
      cfg.seed = detail::parse_int<std::uint64_t>(key, text);
      canon = std::to_string(cfg.seed);
    } else if (key == "init") {
      if (text == "bump") cfg.init = InitKind::Bump;
      else if (text == "mode") cfg.init = InitKind::Mode;
      else if (text == "noise") cfg.init = InitKind::Noise;
      else throw ConfigError(key, "'init' must be bump, mode or noise");
      canon = text;
    } else if (key == "init_scale") {
      cfg.init_scale = detail::parse_double(key, text);
      range(key, cfg.init_scale >= 0.0, "must be >= 0");
      canon = format_double(cfg.init_scale);
    } else if (key == "mode") {
      cfg.mode = detail::parse_int<int>(key, text);
      canon = std::to_string(cfg.mode);
    } else if (key == "eps_tilde") {
      cfg.eps_tilde = detail::parse_double(key, text);
      range(key, cfg.eps_tilde > 0.0 && cfg.eps_tilde < std::numbers::pi, "must be in (0, pi)");
      canon = format_double(cfg.eps_tilde);
    } else if (key == "orders") {
      for (const auto& item : detail::split_list(text)) {
        const int n = detail::parse_int<int>(key, item);
        range(key, n == 0 || n == 1, "entries must be 0 or 1");
        if (std::find(cfg.orders.begin(), cfg.orders.end(), n) == cfg.orders.end()) cfg.orders.push_back(n);
      }
      std::sort(cfg.orders.begin(), cfg.orders.end());
      for (int n : cfg.orders) canon += (canon.empty() ? "" : ",") + std::to_string(n);
    } else if (key == "stride") {
      cfg.stride = detail::parse_int<long>(key, text);
      range(key, cfg.stride >= (cfg.command == "stability" ? 0 : 1), "is out of range");
      canon = std::to_string(cfg.stride);
    } else if (key == "fd_step") {
      cfg.fd_step = detail::parse_double(key, text);
      range(key, cfg.fd_step > 0.0, "must be positive");
      canon = format_double(cfg.fd_step);
    } else if (key == "horizon_cap") {
      cfg.horizon_cap = detail::parse_int<long>(key, text);
      range(key, cfg.horizon_cap >= 1, "must be >= 1");
      canon = std::to_string(cfg.horizon_cap);
    } else if (key == "comparator") {
      range(key, text == "modified" || text == "unmodified", "must be modified or unmodified");
      cfg.unmodified = text == "unmodified";
      canon = text;
    } else if (key == "tolerance") {
      cfg.tolerance = detail::parse_double(key, text);
      range(key, cfg.tolerance > 0.0, "must be positive");
      canon = format_double(cfg.tolerance);
    }
    cfg.effective[key] = canon;
  }
  if (vals.count("mode") && cfg.init == InitKind::Mode)
    range("mode", cfg.mode >= 1 && cfg.mode <= cfg.grid.dim(), "must be in [1, 2K+1]");
  return cfg;
}

inline RunConfig parse_config(const std::string& text, const std::map<std::string, std::string>& overrides = {}) {
  return parse_config(parse_key_values(text), overrides);
}

}  // namespace nlselab
