#pragma once

// Command dispatch and output for the nlselab executable.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <unistd.h>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nlselab/bea.hpp"
#include "nlselab/config.hpp"
#include "nlselab/experiments.hpp"
#include "nlselab/initial_data.hpp"
#include "nlselab/lattice.hpp"
#include "nlselab/stepper.hpp"

namespace nlselab {

inline constexpr const char* kVersion = "0.1.0";

/// Files produced by one run, held in memory until written atomically.
struct RunOutput {
  std::map<std::string, std::string> files;
  nlohmann::json results = nlohmann::json::object();
  int status = 0;
  std::string message;
};

namespace detail {

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& header) { out_ << header << '\n'; }

  template <class... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static std::string cell(double v) { return format_double(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }

  std::ostringstream out_;
};

inline nlohmann::json slope_json(const SlopeEstimate& s) {
  return {{"slope", s.slope},
          {"intercept", s.intercept},
          {"r_squared", s.r_squared},
          {"h_values", s.h_values},
          {"defect_values", s.defect_values}};
}

inline std::string slope_csv(const SlopeEstimate& s) {
  CsvWriter csv("h,defect");
  for (std::size_t i = 0; i < s.h_values.size(); ++i) csv.row(s.h_values[i], s.defect_values[i]);
  return csv.str();
}

inline RunOutput run_trajectory(const RunConfig& cfg) {
  const auto lat = make_lattice(cfg.grid);
  BeaOptions bea;
  bea.eps_tilde = cfg.eps_tilde;
  const FieldState u0 = make_initial_state(*lat, cfg.init_spec());
  const DriftResult res = drift_study(lat, cfg.model, cfg.solver, u0, cfg.T, cfg.orders, cfg.stride, bea);

  std::string header = "step,time,mass,norm_dx,energy_H";
  for (int n : res.orders) header += ",energy_mod_N" + std::to_string(n);
  // one energy column per active order
  std::ostringstream body;
  body << header << '\n';
  double drift_h = 0.0;
  std::vector<double> drift_mod(res.orders.size(), 0.0);
  for (const auto& r : res.reports) {
    body << r.step << ',' << format_double(r.time) << ',' << format_double(r.mass) << ','
         << format_double(r.norm_dx) << ',' << format_double(r.energy_H);
    for (double e : r.energy_mod) body << ',' << format_double(e);
    body << '\n';
    drift_h = std::max(drift_h, std::abs(r.energy_H - res.reports.front().energy_H));
    for (std::size_t i = 0; i < r.energy_mod.size(); ++i)
      drift_mod[i] = std::max(drift_mod[i], std::abs(r.energy_mod[i] - res.reports.front().energy_mod[i]));
  }
  RunOutput out;
  out.files["trajectory.csv"] = body.str();
  out.results["healthy"] = res.healthy;
  out.results["orders"] = res.orders;
  out.results["dropped_orders"] = res.dropped_orders;
  out.results["max_drift_energy_H"] = drift_h;
  for (std::size_t i = 0; i < res.orders.size(); ++i)
    out.results["max_drift_energy_mod_N" + std::to_string(res.orders[i])] = drift_mod[i];
  if (!res.healthy) {
    out.results["failure"] = res.failure;
    out.status = 1;
    out.message = res.failure;
  }
  return out;
}

inline RunOutput run_defect_order(const RunConfig& cfg) {
  const auto lat = make_lattice(cfg.grid);
  DefectOptions opts;
  opts.unmodified = cfg.unmodified;
  opts.fp_tol = std::min(cfg.solver.fp_tol, 1e-15);
  opts.ref_tol = cfg.solver.ref_tol;
  opts.bea.eps_tilde = cfg.eps_tilde;
  const FieldState u0 = make_initial_state(*lat, cfg.init_spec());
  const SlopeEstimate s = defect_order(lat, cfg.model, u0, cfg.h_values, cfg.N, opts);
  RunOutput out;
  out.files["defect.csv"] = slope_csv(s);
  out.files["slope.json"] = slope_json(s).dump(2) + "\n";
  out.results = slope_json(s);
  return out;
}

inline RunOutput run_convergence(const RunConfig& cfg) {
  const auto lat = make_lattice(cfg.grid);
  const FieldState u0 = make_initial_state(*lat, cfg.init_spec());
  const SlopeEstimate s = convergence_order(lat, cfg.model, cfg.solver, u0, cfg.T, cfg.h_values);
  RunOutput out;
  out.files["convergence.csv"] = slope_csv(s);
  out.files["slope.json"] = slope_json(s).dump(2) + "\n";
  out.results = slope_json(s);
  return out;
}

inline RunOutput run_symplectic(const RunConfig& cfg) {
  const auto lat = make_lattice(cfg.grid);
  const FieldState u = make_initial_state(*lat, cfg.init_spec());
  const double mid = symplecticity_check(lat, cfg.model, cfg.solver, cfg.solver.h, u, cfg.fd_step, Scheme::Midpoint);
  const double rk2 = symplecticity_check(lat, cfg.model, cfg.solver, cfg.solver.h, u, cfg.fd_step, Scheme::Rk2);
  CsvWriter csv("scheme,deviation");
  csv.row("midpoint", mid);
  csv.row("rk2", rk2);
  RunOutput out;
  out.files["symplectic.csv"] = csv.str();
  out.results = {{"midpoint", mid}, {"rk2", rk2}, {"verdict", mid <= cfg.tolerance ? "PASS" : "FAIL"}};
  if (mid > cfg.tolerance) {
    out.status = 2;
    out.message = "midpoint deviation " + format_double(mid) + " exceeds tolerance " + format_double(cfg.tolerance);
  }
  return out;
}

inline RunOutput run_stability(const RunConfig& cfg) {
  const auto lat = make_lattice(cfg.grid);
  StabilityOptions opts;
  opts.horizon_cap = cfg.horizon_cap;
  opts.stride = cfg.stride;
  opts.eps_tilde = cfg.eps_tilde;
  opts.init = cfg.init_spec();
  const StabilityVerdict v = longtime_stability(lat, cfg.model, cfg.solver, cfg.epsilon, cfg.kappa, cfg.N, opts);
  CsvWriter csv("step,time,norm_dx,ratio");
  for (const auto& r : v.records) csv.row(r.step, r.time, r.norm_dx, r.ratio);
  RunOutput out;
  out.files["stability.csv"] = csv.str();
  out.results = {{"verdict", v.pass ? "PASS" : "FAIL"},
                 {"max_norm", v.max_norm},
                 {"max_ratio", v.max_ratio},
                 {"bound", v.bound},
                 {"theorem_time", v.theorem_time},
                 {"steps_target", v.steps_target},
                 {"steps_run", v.steps_run},
                 {"horizon_cap", v.horizon_cap},
                 {"cap_binding", v.cap_binding}};
  if (!v.pass) {
    out.status = 2;
    out.message = "norm bound exceeded at step " + std::to_string(v.steps_run);
  }
  return out;
}

inline RunOutput run_cfl(const RunConfig& cfg) {
  const double hmax = cfl_max_step(cfg.grid.delta_x, CflSpec{cfg.N, cfg.model.r, cfg.eps_tilde});
  CsvWriter csv("delta_x,r,N,eps_tilde,h_max");
  csv.row(cfg.grid.delta_x, cfg.model.r, cfg.N, cfg.eps_tilde, hmax);
  RunOutput out;
  out.files["cfl.csv"] = csv.str();
  out.results = {{"h_max", hmax}};
  return out;
}

inline RunOutput run_spectrum(const RunConfig& cfg) {
  const Lattice lat(cfg.grid);
  const int n = lat.dim();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  const double s = 1.0 / (cfg.grid.delta_x * cfg.grid.delta_x);
  for (int i = 0; i < n; ++i) {
    a(i, i) = 2.0 * s;
    if (i + 1 < n) a(i, i + 1) = a(i + 1, i) = -s;
  }
  const Eigen::VectorXd dense = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a, Eigen::EigenvaluesOnly).eigenvalues();
  CsvWriter csv("j,lambda_analytic,lambda_dense,abs_diff");
  double worst = 0.0;
  for (int j = 0; j < n; ++j) {
    const double diff = std::abs(lat.eigenvalues()(j) - dense(j));
    worst = std::max(worst, diff);
    csv.row(j + 1, lat.eigenvalues()(j), dense(j), diff);
  }
  RunOutput out;
  out.files["spectrum.csv"] = csv.str();
  out.results = {{"max_abs_diff", worst}, {"verdict", worst <= cfg.tolerance ? "PASS" : "FAIL"}};
  if (worst > cfg.tolerance) {
    out.status = 2;
    out.message = "spectrum mismatch " + format_double(worst);
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
  if (!f) throw Error("cannot write " + path.string());
}

/// Writes all files into a sibling temporary directory, then renames it.
inline void commit_outputs(const std::filesystem::path& outdir, const std::map<std::string, std::string>& files) {
  namespace fs = std::filesystem;
  if (fs::exists(outdir) && !(fs::is_directory(outdir) && fs::is_empty(outdir)))
    throw Error("output directory " + outdir.string() + " exists and is not empty");
  const fs::path abs = fs::absolute(outdir).lexically_normal();
  const fs::path parent = abs.parent_path();
  fs::create_directories(parent);
  const fs::path tmp = parent / ("." + abs.filename().string() + ".tmp-" + std::to_string(::getpid()));
  fs::remove_all(tmp);
  fs::create_directory(tmp);
  try {
    for (const auto& [name, content] : files) write_file(tmp / name, content);
    if (fs::exists(abs)) fs::remove(abs);
    fs::rename(tmp, abs);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

}  // namespace detail

/// Runs the configured study. Returns the in-memory outputs including the
/// manifest; nothing touches the filesystem.
inline RunOutput execute(const RunConfig& cfg) {
  RunOutput out;
  const std::string& c = cfg.command;
  if (c == "simulate" || c == "drift") out = detail::run_trajectory(cfg);
  else if (c == "defect-order") out = detail::run_defect_order(cfg);
  else if (c == "convergence") out = detail::run_convergence(cfg);
  else if (c == "symplectic-check") out = detail::run_symplectic(cfg);
  else if (c == "stability") out = detail::run_stability(cfg);
  else if (c == "cfl") out = detail::run_cfl(cfg);
  else if (c == "spectrum-check") out = detail::run_spectrum(cfg);
  else throw ConfigError("command", "unknown command '" + c + "'");

  nlohmann::json manifest;
  manifest["command"] = c;
  manifest["config"] = cfg.effective;
  manifest["rng"] = kRngAlgorithm;
  manifest["version"] = kVersion;
  std::vector<std::string> names;
  for (const auto& [name, content] : out.files) names.push_back(name);
  manifest["outputs"] = names;
  manifest["results"] = out.results;
  manifest["status"] = out.status;
  out.files["manifest.json"] = manifest.dump(2) + "\n";
  return out;
}

/// Executes and writes `<outdir>/manifest.json` plus the study CSVs.
/// Returns 0 on success, 2 on a failed check, 1 on errors.
inline int run(const RunConfig& cfg, const std::string& outdir) {
  const RunOutput out = execute(cfg);
  detail::commit_outputs(outdir, out.files);
  if (!out.message.empty()) std::cerr << "nlselab: " << (out.status == 2 ? "FAIL: " : "error: ") << out.message << '\n';
  return out.status;
}

/// Reads a key=value file, or the "config" object of a manifest.json.
inline std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("config", "cannot read config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.contains("config") || !j["config"].is_object())
      throw ConfigError("config", "manifest " + path + " has no config object");
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : j["config"].items()) {
      if (!v.is_string()) throw ConfigError(k, "manifest value for '" + k + "' is not a string");
      out[k] = v.get<std::string>();
    }
    return out;
  }
  return parse_key_values(text);
}

inline int cli_main(int argc, char** argv) {
  CLI::App app{"nlselab: implicit midpoint rule and modified energies for the discrete NLSE"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", kVersion);
  std::string command, config_path, outdir;
  app.add_option("command", command, "Study to run")
      ->required()
      ->check(CLI::IsMember(command_names()));
  app.add_option("--config", config_path, "key=value file or a previous manifest.json");
  app.add_option("--outdir", outdir, "Output directory (created; must not be a non-empty directory)")->required();
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_opts;
  for (const auto& key : config_keys()) {
    if (key == "command") continue;
    flag_opts[key] = app.add_option("--" + key, flag_values[key], "config key " + key)->allow_extra_args(false);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    std::map<std::string, std::string> file;
    if (!config_path.empty()) file = load_config_file(config_path);
    if (file.count("command") && file.at("command") != command)
      throw ConfigError("command", "config file is for command '" + file.at("command") + "', not '" + command + "'");
    std::map<std::string, std::string> overrides{{"command", command}};
    for (const auto& [key, opt] : flag_opts)
      if (opt->count() > 0) overrides[key] = flag_values[key];
    const RunConfig cfg = parse_config(file, overrides);
    return run(cfg, outdir);
  } catch (const ConfigError& e) {
    std::cerr << "nlselab: config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "nlselab: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace nlselab
