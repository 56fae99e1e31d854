#pragma once

// Reproducible studies built on the stepper and the modified energies.

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "nlselab/bea.hpp"
#include "nlselab/errors.hpp"
#include "nlselab/initial_data.hpp"
#include "nlselab/lattice.hpp"
#include "nlselab/stepper.hpp"

namespace nlselab {

struct EnergyReport {
  long step = 0;
  double time = 0.0;
  double mass = 0.0;
  double norm_dx = 0.0;
  double energy_H = 0.0;
  std::vector<double> energy_mod;  ///< one per active order, same order as DriftResult::orders
};

struct SlopeEstimate {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<double> h_values;
  std::vector<double> defect_values;
};

/// Ordinary least squares of log10(d) against log10(h).
inline SlopeEstimate fit_slope(const std::vector<double>& h, const std::vector<double>& d) {
  if (h.size() != d.size() || h.size() < 2) throw ContractViolation("fit_slope: need matching arrays of length >= 2");
  const auto n = static_cast<Eigen::Index>(h.size());
  Eigen::VectorXd x(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(h[static_cast<std::size_t>(i)] > 0.0) || !(d[static_cast<std::size_t>(i)] > 0.0))
      throw ContractViolation("fit_slope: values must be positive");
    x(i) = std::log10(h[static_cast<std::size_t>(i)]);
    y(i) = std::log10(d[static_cast<std::size_t>(i)]);
  }
  const double mx = x.mean(), my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  const double sxy = ((x.array() - mx) * (y.array() - my)).sum();
  const double syy = (y.array() - my).square().sum();
  SlopeEstimate s;
  s.slope = sxy / sxx;
  s.intercept = my - s.slope * mx;
  s.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  s.h_values = h;
  s.defect_values = d;
  return s;
}

/// Worker count: hardware concurrency capped by NLSELAB_THREADS.
inline int worker_count() {
  int n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("NLSELAB_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, cap);
  }
  return n;
}

/// Runs fn(i) for i in [0, count) on up to worker_count() threads. Results are
/// written by index, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(worker_count()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------- drift

struct DriftResult {
  std::vector<int> orders;           ///< modified-energy orders tracked
  std::vector<int> dropped_orders;   ///< requested but CFL-violating
  std::vector<EnergyReport> reports;
  bool healthy = true;
  std::string failure;
};

inline long step_count(double t_final, double h) {
  if (!(t_final >= 0.0)) throw ContractViolation("final time must be >= 0");
  return static_cast<long>(std::llround(std::ceil(t_final / h - 1e-9)));
}

/// Midpoint trajectory to time T recording mass, norm, H and the requested
/// H_h^{(N)} every `stride` steps. A NoConvergence stops the run and marks it
/// unhealthy; the failing step index is kept in `failure`.
inline DriftResult drift_study(const LatticePtr& lat, const ModelParams& params, const SolverParams& solver,
                               const FieldState& u0, double t_final, const std::vector<int>& orders,
                               long stride = 1, const BeaOptions& bea = {}) {
  solver.validate();
  params.validate();
  if (stride < 1) throw ContractViolation("drift_study: stride must be >= 1");
  DriftResult out;
  std::vector<ModifiedEnergy> energies;
  for (int n : orders) {
    try {
      energies.emplace_back(lat, params, solver.h, n, bea);
      out.orders.push_back(n);
    } catch (const CflViolation&) {
      out.dropped_orders.push_back(n);
    }
  }
  auto record = [&](long step, const FieldState& u) {
    EnergyReport r;
    r.step = step;
    r.time = step * solver.h;
    r.mass = mass(*lat, u);
    r.norm_dx = norm_dx(*lat, u);
    r.energy_H = energy(*lat, params, u);
    for (const auto& e : energies) r.energy_mod.push_back(e(u));
    out.reports.push_back(std::move(r));
  };
  const long steps = step_count(t_final, solver.h);
  MidpointStepper stepper(lat, params, solver);
  FieldState u = u0;
  record(0, u);
  for (long s = 1; s <= steps; ++s) {
    try {
      stepper.step(u);
    } catch (const NoConvergence& e) {
      out.healthy = false;
      out.failure = e.at_step(s).what();
      return out;
    }
    if (s % stride == 0 || s == steps) record(s, u);
  }
  return out;
}

// ---------------------------------------------------------------- defect order

struct DefectOptions {
  /// Compare against the unmodified energy H instead of H_h^{(N)}.
  bool unmodified = false;
  double fp_tol = 1e-15;
  double ref_tol = 1e-12;
  BeaOptions bea;
  /// Defects below this are treated as rounding-dominated.
  double floor = 1e-13;
};

inline double one_step_defect(const LatticePtr& lat, const ModelParams& params, const FieldState& u0, double h,
                              int order, const DefectOptions& opts, double ref_tol) {
  SolverParams sp;
  sp.h = h;
  sp.fp_tol = opts.fp_tol;
  sp.max_iters = 500;
  const FieldState u1 = midpoint_step(lat, params, sp, u0).state;
  const FieldOperator field =
      opts.unmodified ? nlse_field(lat, params) : ModifiedEnergy(lat, params, h, order, opts.bea).field();
  return norm_dx(*lat, u1 - reference_flow(field, u0, h, ref_tol));
}

/// One-step defect |midpoint(u0) - Phi^h_{H_h^{(N)}}(u0)|_dx for each h and its
/// log-log slope. The reference tolerance is tightened until it is at most
/// 1/100 of the smallest defect.
inline SlopeEstimate defect_order(const LatticePtr& lat, const ModelParams& params, const FieldState& u0,
                                  const std::vector<double>& h_values, int order, const DefectOptions& opts = {}) {
  if (h_values.size() < 4) throw ContractViolation("defect_order: need at least 4 step sizes");
  if (!opts.unmodified) {
    for (double h : h_values) {
      const double hmax = cfl_max_step(lat->dx(), CflSpec{order, params.r, opts.bea.eps_tilde});
      if (h > hmax) throw CflViolation(h, hmax);
    }
  }
  std::vector<double> defects(h_values.size());
  double ref_tol = opts.ref_tol;
  for (int attempt = 0; attempt < 4; ++attempt) {
    parallel_for(h_values.size(), [&](std::size_t i) {
      defects[i] = one_step_defect(lat, params, u0, h_values[i], order, opts, ref_tol);
    });
    const double dmin = *std::min_element(defects.begin(), defects.end());
    if (dmin < opts.floor)
      throw FloorReached("defect_order: defect " + std::to_string(dmin) +
                         " is at the rounding floor; use a larger initial norm");
    if (ref_tol <= dmin / 100.0) break;
    ref_tol = dmin / 1000.0;
  }
  return fit_slope(h_values, defects);
}

// ---------------------------------------------------------------- symplecticity

enum class Scheme { Midpoint, Rk2 };

/// max |M^T J M - J| for the real Jacobian M of one step in (Re u, Im u)
/// coordinates, by central differences.
inline double symplecticity_check(const LatticePtr& lat, const ModelParams& params, const SolverParams& solver,
                                  double h, const FieldState& u, double fd_step, Scheme scheme = Scheme::Midpoint) {
  const int n = lat->dim();
  if (lat->grid().K > 8) throw ContractViolation("symplecticity_check: K must be <= 8");
  SolverParams sp = solver;
  sp.h = h;
  auto step = [&](const FieldState& v) -> FieldState {
    if (scheme == Scheme::Rk2) return rk2_explicit_step(*lat, params, h, v);
    return midpoint_step(lat, params, sp, v).state;
  };
  Eigen::MatrixXd m(2 * n, 2 * n);
  for (int col = 0; col < 2 * n; ++col) {
    FieldState plus = u, minus = u;
    const Complex e = col < n ? Complex(fd_step, 0.0) : Complex(0.0, fd_step);
    plus(col % n) += e;
    minus(col % n) -= e;
    const FieldState d = (step(plus) - step(minus)) / (2.0 * fd_step);
    m.col(col).head(n) = d.real();
    m.col(col).tail(n) = d.imag();
  }
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  j.topRightCorner(n, n) = Eigen::MatrixXd::Identity(n, n);
  j.bottomLeftCorner(n, n) = -Eigen::MatrixXd::Identity(n, n);
  return (m.transpose() * j * m - j).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------- long-time stability

struct StabilityRecord {
  long step = 0;
  double time = 0.0;
  double norm_dx = 0.0;
  double ratio = 0.0;  ///< norm_dx / eps^{1-kappa}
};

struct StabilityVerdict {
  bool pass = false;
  double max_norm = 0.0;
  double max_ratio = 0.0;
  double bound = 0.0;            ///< eps^{1-kappa}
  double theorem_time = 0.0;     ///< (h eps^{2r(1-kappa)})^{-N}
  long steps_target = 0;         ///< min(theorem steps, cap)
  long steps_run = 0;
  long horizon_cap = 0;
  bool cap_binding = false;
  std::vector<StabilityRecord> records;
};

struct StabilityOptions {
  long horizon_cap = 10'000'000;
  long stride = 0;  ///< 0 chooses about 10^4 records
  InitSpec init;    ///< the norm field is overwritten by epsilon
  double eps_tilde = std::numbers::pi / 2;
};

/// Runs from an initial state of norm eps until n h reaches
/// min((h eps^{2r(1-kappa)})^{-N}, cap h). PASS iff the norm never exceeds
/// eps^{1-kappa}. The run stops at the first violation.
inline StabilityVerdict longtime_stability(const LatticePtr& lat, const ModelParams& params,
                                           const SolverParams& solver, double epsilon, double kappa, int order,
                                           const StabilityOptions& opts = {}) {
  solver.validate();
  params.validate();
  if (!(kappa > 0.0 && kappa < 0.5)) throw ContractViolation("longtime_stability: kappa must lie in (0, 1/2)");
  if (!(epsilon > 0.0)) throw ContractViolation("longtime_stability: epsilon must be positive");
  const double hmax = cfl_max_step(lat->dx(), CflSpec{order, params.r, opts.eps_tilde});
  if (solver.h > hmax) throw CflViolation(solver.h, hmax);

  StabilityVerdict v;
  v.bound = std::pow(epsilon, 1.0 - kappa);
  v.theorem_time = std::pow(solver.h * std::pow(epsilon, 2.0 * params.r * (1.0 - kappa)), -order);
  const double theorem_steps = std::floor(v.theorem_time / solver.h);
  v.horizon_cap = opts.horizon_cap;
  v.cap_binding = theorem_steps > static_cast<double>(opts.horizon_cap);
  v.steps_target = v.cap_binding ? opts.horizon_cap : static_cast<long>(theorem_steps);
  const long stride = opts.stride > 0 ? opts.stride : std::max<long>(1, v.steps_target / 10000);

  InitSpec init = opts.init;
  init.norm = epsilon;
  FieldState u = make_initial_state(*lat, init);
  MidpointStepper stepper(lat, params, solver);
  auto observe = [&](long s) {
    const double nu = norm_dx(*lat, u);
    v.max_norm = std::max(v.max_norm, nu);
    return nu;
  };
  auto push = [&](long s, double nu) { v.records.push_back({s, s * solver.h, nu, nu / v.bound}); };
  push(0, observe(0));
  bool violated = v.max_norm > v.bound;
  long s = 0;
  while (!violated && s < v.steps_target) {
    ++s;
    try {
      stepper.step(u);
    } catch (const NoConvergence& e) {
      throw e.at_step(s);
    }
    const double nu = observe(s);
    violated = nu > v.bound;
    if (s % stride == 0 || s == v.steps_target || violated) push(s, nu);
  }
  v.steps_run = s;
  v.max_ratio = v.max_norm / v.bound;
  v.pass = !violated;
  return v;
}

// ---------------------------------------------------------------- convergence order

struct ConvergenceOptions {
  double fp_tol = 1e-15;
  double floor = 1e-13;
};

/// Global error at time T of the midpoint rule against a high-accuracy flow of
/// the full NLSE field, fitted over h.
inline SlopeEstimate convergence_order(const LatticePtr& lat, const ModelParams& params, const SolverParams& solver,
                                       const FieldState& u0, double t_final, const std::vector<double>& h_values,
                                       const ConvergenceOptions& opts = {}) {
  if (h_values.size() < 4) throw ContractViolation("convergence_order: need at least 4 step sizes");
  double ref_tol = solver.ref_tol;
  std::vector<double> errors(h_values.size());
  std::vector<FieldState> finals(h_values.size());
  parallel_for(h_values.size(), [&](std::size_t i) {
    SolverParams sp = solver;
    sp.h = h_values[i];
    sp.fp_tol = std::min(solver.fp_tol, opts.fp_tol);
    const long steps = step_count(t_final, sp.h);
    if (std::abs(steps * sp.h - t_final) > 1e-9 * std::max(1.0, t_final))
      throw ContractViolation("convergence_order: T must be a multiple of every h");
    MidpointStepper stepper(lat, params, sp);
    FieldState u = u0;
    for (long s = 0; s < steps; ++s) stepper.step(u);
    finals[i] = u;
  });
  const FieldOperator field = nlse_field(lat, params);
  for (int attempt = 0; attempt < 4; ++attempt) {
    const FieldState ref = reference_flow(field, u0, t_final, ref_tol);
    for (std::size_t i = 0; i < h_values.size(); ++i) errors[i] = norm_dx(*lat, finals[i] - ref);
    const double emin = *std::min_element(errors.begin(), errors.end());
    if (emin < opts.floor) throw FloorReached("convergence_order: error at the rounding floor");
    if (ref_tol <= emin / 100.0) break;
    ref_tol = emin / 1000.0;
  }
  return fit_slope(h_values, errors);
}

}  // namespace nlselab
