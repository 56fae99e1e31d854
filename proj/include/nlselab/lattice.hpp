#pragma once

// Lattice geometry for the Dirichlet finite-difference NLSE: the Laplacian, its
// sine spectrum, discrete H1 norms, energies and the hat-function embedding.
//
// States are complex vectors of length 2K+1 indexed l = -K..K (storage index
// l+K). The ghost values at l = +-(K+1) are zero and never stored.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>

#include "nlselab/errors.hpp"

namespace nlselab {

using Complex = std::complex<double>;
using FieldState = Eigen::VectorXcd;
using RealVector = Eigen::VectorXd;

struct GridSpec {
  int K = 1;
  double delta_x = 1.0;

  int dim() const { return 2 * K + 1; }

  void validate() const {
    if (K < 1) throw ContractViolation("GridSpec: K must be >= 1");
    if (!(delta_x > 0.0) || !std::isfinite(delta_x))
      throw ContractViolation("GridSpec: delta_x must be positive");
  }
};

/// lambda = 0 is the linear diagnostic mode.
struct ModelParams {
  int lambda = 1;
  int r = 1;

  void validate() const {
    if (lambda < -1 || lambda > 1) throw ContractViolation("ModelParams: lambda must be -1, 0 or 1");
    if (r < 1) throw ContractViolation("ModelParams: r must be >= 1");
  }
};

inline void require_dim(const GridSpec& g, const FieldState& u, const char* who) {
  if (u.size() != g.dim())
    throw ContractViolation(std::string(who) + ": state has dimension " + std::to_string(u.size()) +
                            ", grid expects " + std::to_string(g.dim()));
}

/// Elementwise integer power by repeated multiplication (exact exponent, no log/exp).
template <class Array>
Array ipow(const Array& a, int k) {
  Array out = Array::Ones(a.size());
  for (int i = 0; i < k; ++i) out *= a;
  return out;
}

/// A grid together with its sine spectrum. A = S D S with S the orthonormal
/// DST-I matrix (symmetric and involutory), so the same matrix maps physical
/// values to mode coefficients and back. Immutable once built.
class Lattice {
 public:
  explicit Lattice(GridSpec grid) : grid_(grid) {
    grid_.validate();
    const int n = grid_.dim();
    const double m = n + 1;
    eigenvalues_.resize(n);
    sine_.resize(n, n);
    const double scale = std::sqrt(2.0 / m);
    for (int j = 1; j <= n; ++j) {
      const double s = std::sin(j * std::numbers::pi / (2.0 * m));
      eigenvalues_(j - 1) = 4.0 * s * s / (grid_.delta_x * grid_.delta_x);
      for (int l = 1; l <= n; ++l) {
        // reduce l*j mod 2m before the sine to keep the argument small
        const long phase = (static_cast<long>(l) * j) % (2 * (n + 1));
        sine_(l - 1, j - 1) = scale * std::sin(phase * std::numbers::pi / m);
      }
    }
  }

  const GridSpec& grid() const { return grid_; }
  operator const GridSpec&() const { return grid_; }
  int dim() const { return grid_.dim(); }
  double dx() const { return grid_.delta_x; }

  /// Eigenvalues of A in increasing order (j = 1..2K+1).
  const RealVector& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& sine_matrix() const { return sine_; }

  /// out = S in; `out` must not alias `in`.
  void transform(const FieldState& in, FieldState& out) const {
    const int n = dim();
    out.resize(n);
    Eigen::Map<const Eigen::Matrix<double, 2, Eigen::Dynamic>> x(
        reinterpret_cast<const double*>(in.data()), 2, n);
    Eigen::Map<Eigen::Matrix<double, 2, Eigen::Dynamic>> y(reinterpret_cast<double*>(out.data()), 2, n);
    y.noalias() = x * sine_;
  }

  FieldState to_modes(const FieldState& u) const {
    require_dim(grid_, u, "to_modes");
    FieldState out;
    transform(u, out);
    return out;
  }

  FieldState from_modes(const FieldState& m) const {
    require_dim(grid_, m, "from_modes");
    FieldState out;
    transform(m, out);
    return out;
  }

  /// Applies the function of A with mode multipliers `symbol`.
  FieldState apply_symbol(const Eigen::VectorXcd& symbol, const FieldState& u) const {
    FieldState modes;
    transform(u, modes);
    modes.array() *= symbol.array();
    FieldState out;
    transform(modes, out);
    return out;
  }

  /// Squared discrete H1 norm computed from mode coefficients.
  double mode_norm2(const FieldState& modes) const {
    return grid_.delta_x * ((1.0 + eigenvalues_.array()) * modes.array().abs2()).sum();
  }

  double mode_inner(const FieldState& a, const FieldState& b) const {
    return grid_.delta_x * ((1.0 + eigenvalues_.array()) * (a.array().conjugate() * b.array()).real()).sum();
  }

  /// Symbol of R(hA) = exp(2i arctan(hA/2)); `adjoint` negates the phase.
  Eigen::VectorXcd propagator_symbol(double h, bool adjoint = false) const {
    const double sgn = adjoint ? -1.0 : 1.0;
    return eigenvalues_.unaryExpr([&](double l) {
      return std::polar(1.0, sgn * 2.0 * std::atan(h * l / 2.0));
    });
  }

  /// Symbol of (1 + s*ihA/2)^{-1} with s = +1 or -1.
  Eigen::VectorXcd resolvent_symbol(double h, int s) const {
    return eigenvalues_.unaryExpr([&](double l) { return 1.0 / Complex(1.0, s * h * l / 2.0); });
  }

 private:
  GridSpec grid_;
  RealVector eigenvalues_;
  Eigen::MatrixXd sine_;
};

using LatticePtr = std::shared_ptr<const Lattice>;

inline LatticePtr make_lattice(GridSpec grid) { return std::make_shared<const Lattice>(grid); }

/// The sine spectrum of A (eigenvalues and DST-I transform pair).
inline Lattice sine_spectrum(const GridSpec& grid) { return Lattice(grid); }

inline FieldState apply_laplacian(const GridSpec& g, const FieldState& u) {
  require_dim(g, u, "apply_laplacian");
  const int n = g.dim();
  const double s = 1.0 / (g.delta_x * g.delta_x);
  FieldState out(n);
  for (int i = 0; i < n; ++i) {
    const Complex left = i > 0 ? u(i - 1) : Complex(0.0);
    const Complex right = i + 1 < n ? u(i + 1) : Complex(0.0);
    out(i) = s * (2.0 * u(i) - left - right);
  }
  return out;
}

inline FieldState apply_propagator(const Lattice& lat, double h, const FieldState& u, bool adjoint = false) {
  require_dim(lat, u, "apply_propagator");
  return lat.apply_symbol(lat.propagator_symbol(h, adjoint), u);
}

enum class ResolventSign { Plus, Minus };

/// Plus: (1 + ihA/2)^{-1} u.  Minus: (1 - ihA/2)^{-1} u.
inline FieldState apply_cayley_resolvent(const Lattice& lat, double h, ResolventSign sign, const FieldState& u) {
  require_dim(lat, u, "apply_cayley_resolvent");
  return lat.apply_symbol(lat.resolvent_symbol(h, sign == ResolventSign::Plus ? 1 : -1), u);
}

/// delta_x * Re[conj(u)^T A v], via differences with the ghost values.
inline double gradient_form(const GridSpec& g, const FieldState& u, const FieldState& v) {
  const int n = g.dim();
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const Complex du = (i < n ? u(i) : Complex(0.0)) - (i > 0 ? u(i - 1) : Complex(0.0));
    const Complex dv = (i < n ? v(i) : Complex(0.0)) - (i > 0 ? v(i - 1) : Complex(0.0));
    acc += (std::conj(du) * dv).real();
  }
  return acc / g.delta_x;
}

inline double inner_dx(const GridSpec& g, const FieldState& u, const FieldState& v) {
  require_dim(g, u, "inner_dx");
  require_dim(g, v, "inner_dx");
  return g.delta_x * u.dot(v).real() + gradient_form(g, u, v);
}

inline double norm_dx(const GridSpec& g, const FieldState& u) {
  return std::sqrt(std::max(0.0, inner_dx(g, u, u)));
}

inline double mass(const GridSpec& g, const FieldState& u) {
  require_dim(g, u, "mass");
  return g.delta_x * u.squaredNorm();
}

/// delta_x * sum |u|^{2r+2}
inline double power_sum(const GridSpec& g, const FieldState& u, int r) {
  return g.delta_x * ipow(Eigen::ArrayXd(u.array().abs2()), r + 1).sum();
}

inline double energy(const GridSpec& g, const ModelParams& p, const FieldState& u) {
  require_dim(g, u, "energy");
  return gradient_form(g, u, u) + p.lambda / (p.r + 1.0) * power_sum(g, u, p.r);
}

inline FieldState nonlinearity(const ModelParams& p, const FieldState& u) {
  if (p.lambda == 0) return FieldState::Zero(u.size());
  return (static_cast<double>(p.lambda) * ipow(Eigen::ArrayXd(u.array().abs2()), p.r) * u.array()).matrix();
}

/// Hat-function interpolant sum_j u_j s(x/dx - j).
inline Complex interpolate(const GridSpec& g, const FieldState& u, double x) {
  require_dim(g, u, "interpolate");
  const double t = x / g.delta_x;
  const double j0 = std::floor(t);
  const double frac = t - j0;
  auto node = [&](double j) -> Complex {
    if (j < -g.K || j > g.K) return 0.0;
    return u(static_cast<int>(j) + g.K);
  };
  return (1.0 - frac) * node(j0) + frac * node(j0 + 1.0);
}

/// Exact H1 norm of the interpolant (hat-basis mass and stiffness matrices).
inline double interpolant_h1_norm(const GridSpec& g, const FieldState& u) {
  require_dim(g, u, "interpolant_h1_norm");
  const int n = g.dim();
  double l2 = 0.0;
  for (int i = 0; i <= n; ++i) {
    const Complex a = i > 0 ? u(i - 1) : Complex(0.0);
    const Complex b = i < n ? u(i) : Complex(0.0);
    l2 += (std::norm(a) + (std::conj(a) * b).real() + std::norm(b)) / 3.0;
  }
  return std::sqrt(g.delta_x * l2 + gradient_form(g, u, u));
}

}  // namespace nlselab
