#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

#include "nlselab/errors.hpp"
#include "nlselab/field.hpp"
#include "nlselab/lattice.hpp"

namespace nlselab {

struct SolverParams {
  double h = 0.01;
  double fp_tol = 1e-13;
  int max_iters = 200;
  double ref_tol = 1e-12;
  /// 0 selects plain Picard iteration; m > 0 enables Anderson mixing of depth m.
  int anderson_depth = 0;

  void validate() const {
    if (!(h > 0.0) || !std::isfinite(h)) throw ContractViolation("SolverParams: h must be positive");
    if (!(fp_tol > 0.0)) throw ContractViolation("SolverParams: fp_tol must be positive");
    if (max_iters < 1) throw ContractViolation("SolverParams: max_iters must be >= 1");
    if (!(ref_tol > 0.0)) throw ContractViolation("SolverParams: ref_tol must be positive");
    if (anderson_depth < 0) throw ContractViolation("SolverParams: anderson_depth must be >= 0");
  }
};

struct StepDiagnostics {
  int iterations = 0;
  double final_residual = 0.0;
  bool converged = false;
};

struct StepResult {
  FieldState state;
  StepDiagnostics diagnostics;
};

namespace detail {

// Solves x = g(x) in mode coordinates, measuring increments in the discrete H1
// norm. `g(x, out)` writes g(x) into `out`.
template <class Map>
StepDiagnostics solve_fixed_point(const Lattice& lat, Map&& g, FieldState& x, double tol, int max_iters,
                                  int anderson_depth) {
  StepDiagnostics diag;
  FieldState gx(x.size());
  std::deque<FieldState> dx_hist, dr_hist;
  FieldState prev_x, prev_r;
  for (int k = 1; k <= max_iters; ++k) {
    g(x, gx);
    FieldState res = gx - x;
    const double r = std::sqrt(lat.mode_norm2(res));
    diag.iterations = k;
    diag.final_residual = r;
    if (!std::isfinite(r)) throw NoConvergence("fixed-point iteration diverged", r, k);
    if (r <= tol) {
      x.swap(gx);
      diag.converged = true;
      return diag;
    }
    if (anderson_depth == 0) {
      x.swap(gx);
      continue;
    }
    // Anderson type II on the residual r(x) = g(x) - x. The stopping test
    // above is applied to a plain map evaluation, so acceleration never
    // changes what counts as converged.
    if (k > 1) {
      dx_hist.push_back(x - prev_x);
      dr_hist.push_back(res - prev_r);
      if (static_cast<int>(dx_hist.size()) > anderson_depth) {
        dx_hist.pop_front();
        dr_hist.pop_front();
      }
    }
    prev_x = x;
    prev_r = res;
    if (dr_hist.empty()) {
      x = gx;
      continue;
    }
    const int m = static_cast<int>(dr_hist.size());
    Eigen::MatrixXcd dr(x.size(), m), dxm(x.size(), m);
    for (int i = 0; i < m; ++i) {
      dr.col(i) = dr_hist[i];
      dxm.col(i) = dx_hist[i];
    }
    const Eigen::VectorXcd gamma = dr.colPivHouseholderQr().solve(res);
    x = gx - (dxm + dr) * gamma;
  }
  throw NoConvergence("fixed-point iteration did not converge", diag.final_residual, diag.iterations);
}

inline Eigen::VectorXcd diag_product(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  return (a.array() * b.array()).matrix();
}

}  // namespace detail

/// Implicit midpoint rule for u' = iAu + i f(u):
///   u1 = u + (ih/2)A(u1 + u) + ih f((u1 + u)/2).
/// Iterates u1 = R(hA)u + ih (1 - ihA/2)^{-1} f((u + u1)/2), which is the
/// Psi fixed point rotated by R(hA). Caches symbols and work vectors so long
/// trajectories do not allocate per step.
class MidpointStepper {
 public:
  MidpointStepper(LatticePtr lat, ModelParams params, SolverParams solver)
      : lat_(std::move(lat)), params_(params), solver_(solver) {
    params_.validate();
    if (!(solver_.fp_tol > 0.0) || solver_.max_iters < 1) throw ContractViolation("MidpointStepper: bad solver");
    rotation_ = lat_->propagator_symbol(solver_.h);
    forcing_ = Complex(0.0, solver_.h) * lat_->resolvent_symbol(solver_.h, -1);
  }

  const SolverParams& solver() const { return solver_; }

  StepDiagnostics step(FieldState& u) {
    const Lattice& lat = *lat_;
    require_dim(lat, u, "midpoint_step");
    if (!u.allFinite()) throw ContractViolation("midpoint_step: non-finite state");
    lat.transform(u, u_modes_);
    base_ = detail::diag_product(rotation_, u_modes_);
    FieldState x = base_;
    if (params_.lambda == 0) {
      lat.transform(x, u);
      return {1, 0.0, true};
    }
    auto g = [&](const FieldState& x_modes, FieldState& out) {
      lat.transform(x_modes, phys_);
      mid_ = 0.5 * (u + phys_);
      mid_ = nonlinearity(params_, mid_);
      lat.transform(mid_, out);
      out.array() = base_.array() + forcing_.array() * out.array();
    };
    const StepDiagnostics diag =
        detail::solve_fixed_point(lat, g, x, solver_.fp_tol, solver_.max_iters, solver_.anderson_depth);
    lat.transform(x, u);
    return diag;
  }

 private:
  LatticePtr lat_;
  ModelParams params_;
  SolverParams solver_;
  Eigen::VectorXcd rotation_, forcing_;
  FieldState u_modes_, base_, phys_, mid_;
};

inline StepResult midpoint_step(const LatticePtr& lat, const ModelParams& params, const SolverParams& solver,
                                const FieldState& u) {
  MidpointStepper stepper(lat, params, solver);
  StepResult out{u, {}};
  out.diagnostics = stepper.step(out.state);
  return out;
}

/// Psi^h_eps(u): the fixed point v = u + i eps (1 + ihA/2)^{-1} f((u + R(hA)v)/2).
inline StepResult psi_map(const LatticePtr& lat, const ModelParams& params, double h, double eps,
                          const FieldState& u, double fp_tol = 1e-13, int max_iters = 200,
                          int anderson_depth = 0) {
  require_dim(*lat, u, "psi_map");
  params.validate();
  const Lattice& l = *lat;
  const FieldState u_modes = l.to_modes(u);
  const Eigen::VectorXcd rot = l.propagator_symbol(h);
  const Eigen::VectorXcd forcing = Complex(0.0, eps) * l.resolvent_symbol(h, +1);
  FieldState x = u_modes;
  StepDiagnostics diag{0, 0.0, true};
  if (params.lambda != 0 && eps != 0.0) {
    FieldState phys, mid;
    auto g = [&](const FieldState& v, FieldState& out) {
      mid = 0.5 * (u_modes + detail::diag_product(rot, v));
      l.transform(mid, phys);
      phys = nonlinearity(params, phys);
      l.transform(phys, out);
      out.array() = u_modes.array() + forcing.array() * out.array();
    };
    diag = detail::solve_fixed_point(l, g, x, fp_tol, max_iters, anderson_depth);
  }
  return {l.from_modes(x), diag};
}

/// Psi_{h,1}(u) = i lambda (1 + ihA/2)^{-1}(|w|^{2r} w), w = (u + R(hA)u)/2.
inline FieldState psi_leading_term(const Lattice& lat, const ModelParams& params, double h, const FieldState& u) {
  require_dim(lat, u, "psi_leading_term");
  const FieldState w = 0.5 * (u + apply_propagator(lat, h, u));
  const FieldState f = nonlinearity(params, w);
  return Complex(0.0, 1.0) * apply_cayley_resolvent(lat, h, ResolventSign::Plus, f);
}

/// The NLSE vector field u -> iAu + i f(u).
inline FieldState nlse_rhs(const GridSpec& g, const ModelParams& p, const FieldState& u) {
  return Complex(0.0, 1.0) * (apply_laplacian(g, u) + nonlinearity(p, u));
}

/// Explicit midpoint (two-stage, second order). Not symplectic; used as a comparator.
inline FieldState rk2_explicit_step(const GridSpec& g, const ModelParams& p, double h, const FieldState& u) {
  const FieldState k1 = nlse_rhs(g, p, u);
  const FieldState k2 = nlse_rhs(g, p, u + 0.5 * h * k1);
  return u + h * k2;
}

namespace detail {

// Gragg-Bulirsch-Stoer step: modified midpoint with 2,4,6,8 substeps and
// Aitken-Neville extrapolation in H^2 (order 8). Returns the error estimate.
template <class Rhs>
double gbs_step(Rhs& rhs, const FieldState& y0, const FieldState& f0, double big_h, FieldState& out,
                const std::function<double(const FieldState&)>& norm) {
  constexpr std::array<int, 4> seq{2, 4, 6, 8};
  std::array<FieldState, 4> prev, cur;
  FieldState z0, z1, z2, f;
  for (std::size_t j = 0; j < seq.size(); ++j) {
    const int n = seq[j];
    const double hs = big_h / n;
    z0 = y0;
    z1 = y0 + hs * f0;
    for (int m = 1; m < n; ++m) {
      rhs(z1, f);
      z2 = z0 + 2.0 * hs * f;
      z0.swap(z1);
      z1.swap(z2);
    }
    cur[0] = z1;
    for (std::size_t k = 1; k <= j; ++k) {
      const double ratio = static_cast<double>(seq[j]) / seq[j - k];
      cur[k] = cur[k - 1] + (cur[k - 1] - prev[k - 1]) / (ratio * ratio - 1.0);
    }
    std::swap(prev, cur);
  }
  out = prev[3];
  return norm(prev[3] - prev[2]);
}

}  // namespace detail

/// Integrates du/dt = X(u) for time t (any sign) with an order-8 extrapolation
/// method. Base step min(ref_tol^{1/8}, t/64); any step whose local estimate
/// exceeds its share ref_tol*|H|/|t| is halved. Estimates at round-off level
/// (8 ulp of the state norm) are always accepted.
inline FieldState reference_flow(const FieldOperator& field, const FieldState& u, double t, double ref_tol) {
  const Lattice& lat = *field.lattice();
  require_dim(lat, u, "reference_flow");
  if (!(ref_tol > 0.0)) throw ContractViolation("reference_flow: ref_tol must be positive");
  if (t == 0.0) return u;
  FieldState y = lat.to_modes(u);
  auto rhs = [&](const FieldState& modes, FieldState& out) { out = field.eval(BiState::real_slice(modes)).u; };
  auto norm = [&](const FieldState& m) { return std::sqrt(lat.mode_norm2(m)); };
  const double abs_t = std::abs(t);
  const long base_steps = std::max<long>(64, static_cast<long>(std::ceil(abs_t / std::pow(ref_tol, 0.125))));
  const double base_h = t / base_steps;
  const double min_h = abs_t * 1e-9;

  FieldState f0, next;
  std::function<void(double)> advance = [&](double big_h) {
    rhs(y, f0);
    const double err = detail::gbs_step(rhs, y, f0, big_h, next, norm);
    if (!std::isfinite(err)) throw StiffnessError("reference_flow: non-finite state");
    const double floor = 8.0 * std::numeric_limits<double>::epsilon() * norm(y);
    if (err <= std::max(ref_tol * std::abs(big_h) / abs_t, floor)) {
      y.swap(next);
      return;
    }
    if (std::abs(big_h) < min_h) throw StiffnessError("reference_flow: step-size underflow");
    advance(0.5 * big_h);
    advance(0.5 * big_h);
  };
  for (long s = 0; s < base_steps; ++s) advance(base_h);
  return lat.from_modes(y);
}

/// Field of the full NLSE Hamiltonian: u -> iAu + i f(u).
inline FieldOperator nlse_field(const LatticePtr& lat, const ModelParams& params) {
  const Eigen::VectorXcd symbol = Complex(0.0, 1.0) * lat->eigenvalues().cast<Complex>();
  const FieldOperator linear = FieldOperator::spectral(lat, symbol);
  if (params.lambda == 0) return linear;
  const double lam = params.lambda;
  const int r = params.r;
  auto eval = [lat, lam, r](const BiState& x) {
    FieldState pu, pc, gu, gc;
    lat->transform(x.u, pu);
    lat->transform(x.c, pc);
    const Eigen::ArrayXcd mu = ipow(Eigen::ArrayXcd(pu.array() * pc.array()), r);
    FieldState fu = (Complex(0.0, lam) * mu * pu.array()).matrix();
    FieldState fc = (Complex(0.0, -lam) * mu * pc.array()).matrix();
    lat->transform(fu, gu);
    lat->transform(fc, gc);
    return BiState{gu, gc};
  };
  auto jvp = [lat, lam, r](const BiState& x, const BiState& dx) {
    FieldState pu, pc, du, dc, gu, gc;
    lat->transform(x.u, pu);
    lat->transform(x.c, pc);
    lat->transform(dx.u, du);
    lat->transform(dx.c, dc);
    const Eigen::ArrayXcd prod = pu.array() * pc.array();
    const Eigen::ArrayXcd mr1 = ipow(prod, r - 1);
    const Eigen::ArrayXcd mr = mr1 * prod;
    FieldState fu = (Complex(0.0, lam) *
                     ((r + 1.0) * mr * du.array() + r * mr1 * pu.array().square() * dc.array()))
                        .matrix();
    FieldState fc = (Complex(0.0, -lam) *
                     ((r + 1.0) * mr * dc.array() + r * mr1 * pc.array().square() * du.array()))
                        .matrix();
    lat->transform(fu, gu);
    lat->transform(fc, gc);
    return BiState{gu, gc};
  };
  return linear + FieldOperator(lat, eval, jvp, 2 * r + 1);
}

}  // namespace nlselab
