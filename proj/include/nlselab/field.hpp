#pragma once

// Vector fields on the lattice state space.
//
// Fields are real-analytic maps of u, i.e. polynomials in (u, conj u). To
// differentiate them and to continue them analytically in a complex time
// parameter we evaluate on bi-states x = (u, c) where c stands in for conj u
// as an independent variable; the real slice is c = conj(u). Every field maps
// bi-states to bi-states and restricts to the ordinary field on the real slice.
// Internally bi-states hold sine-mode coefficients; the physical <-> mode map
// is the real orthogonal DST, so derivatives and brackets are unaffected.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nlselab/lattice.hpp"

namespace nlselab {

struct BiState {
  FieldState u;
  FieldState c;

  static BiState real_slice(const FieldState& modes) { return {modes, modes.conjugate()}; }
  static BiState zero(int n) { return {FieldState::Zero(n), FieldState::Zero(n)}; }

  BiState& operator+=(const BiState& o) {
    u += o.u;
    c += o.c;
    return *this;
  }
  BiState& operator-=(const BiState& o) {
    u -= o.u;
    c -= o.c;
    return *this;
  }
  /// Same scalar on both slots: this is a linear combination of bi-states,
  /// not the action of a complex constant inside a field.
  BiState& operator*=(Complex a) {
    u *= a;
    c *= a;
    return *this;
  }
  void add_scaled(Complex a, const BiState& o) {
    u.noalias() += a * o.u;
    c.noalias() += a * o.c;
  }
  friend BiState operator+(BiState a, const BiState& b) { return a += b; }
  friend BiState operator-(BiState a, const BiState& b) { return a -= b; }
  friend BiState operator*(Complex s, BiState a) { return a *= s; }
};

/// Discrete H1 size of a bi-state; equals norm_dx on the real slice.
inline double bi_norm(const Lattice& lat, const BiState& x) {
  return std::sqrt(0.5 * (lat.mode_norm2(x.u) + lat.mode_norm2(x.c)));
}

class FieldOperator {
 public:
  using EvalFn = std::function<BiState(const BiState&)>;
  using JvpFn = std::function<BiState(const BiState&, const BiState&)>;

  /// Mode-space matrix of a linear field. Diagonal when `symbol` is set.
  struct LinearRep {
    Eigen::VectorXcd symbol;
    Eigen::MatrixXcd dense;
    bool diagonal() const { return symbol.size() > 0; }
    Eigen::MatrixXcd matrix() const {
      return diagonal() ? Eigen::MatrixXcd(symbol.asDiagonal()) : dense;
    }
  };

  FieldOperator(LatticePtr lat, EvalFn eval, JvpFn jvp = {}, std::optional<int> degree = std::nullopt)
      : impl_(std::make_shared<Impl>()) {
    impl_->lat = std::move(lat);
    impl_->eval = std::move(eval);
    impl_->jvp = std::move(jvp);
    impl_->degree = degree;
  }

  /// Linear field u -> f(A)u with mode multipliers `symbol`.
  static FieldOperator spectral(LatticePtr lat, Eigen::VectorXcd symbol) {
    if (symbol.size() != lat->dim()) throw ContractViolation("spectral field: symbol size mismatch");
    LinearRep rep;
    rep.symbol = std::move(symbol);
    return from_linear(std::move(lat), std::move(rep));
  }

  /// Linear field u -> B u for a physical-space matrix B.
  static FieldOperator linear(LatticePtr lat, const Eigen::MatrixXcd& physical) {
    if (physical.rows() != lat->dim() || physical.cols() != lat->dim())
      throw ContractViolation("linear field: matrix size mismatch");
    const Eigen::MatrixXd& s = lat->sine_matrix();
    LinearRep rep;
    rep.dense = s * physical * s;
    return from_linear(std::move(lat), std::move(rep));
  }

  static FieldOperator zero(LatticePtr lat, std::optional<int> degree = std::nullopt) {
    const int n = lat->dim();
    auto z = [n](const BiState&) { return BiState::zero(n); };
    auto dz = [n](const BiState&, const BiState&) { return BiState::zero(n); };
    return FieldOperator(std::move(lat), z, dz, degree);
  }

  const LatticePtr& lattice() const { return impl_->lat; }
  std::optional<int> degree() const { return impl_->degree; }
  bool has_exact_jvp() const { return static_cast<bool>(impl_->jvp); }
  bool is_linear() const { return impl_->linear.has_value(); }
  const LinearRep& linear_rep() const {
    if (!impl_->linear) throw ContractViolation("field is not linear");
    return *impl_->linear;
  }

  BiState eval(const BiState& x) const { return impl_->eval(x); }

  BiState jvp(const BiState& x, const BiState& dx) const {
    if (impl_->jvp) return impl_->jvp(x, dx);
    if (impl_->degree) return cauchy_jvp(x, dx, *impl_->degree);
    return central_difference_jvp(x, dx);
  }

  /// Evaluation on a physical real state.
  FieldState operator()(const FieldState& u) const {
    const Lattice& lat = *impl_->lat;
    require_dim(lat, u, "FieldOperator");
    FieldState out;
    lat.transform(eval(BiState::real_slice(lat.to_modes(u))).u, out);
    return out;
  }

  /// Directional derivative at a physical real state along a physical direction.
  FieldState jvp(const FieldState& u, const FieldState& du) const {
    const Lattice& lat = *impl_->lat;
    require_dim(lat, u, "FieldOperator::jvp");
    require_dim(lat, du, "FieldOperator::jvp");
    FieldState out;
    lat.transform(jvp(BiState::real_slice(lat.to_modes(u)), BiState::real_slice(lat.to_modes(du))).u, out);
    return out;
  }

  /// e^{zX} x for a linear field X and complex z.
  BiState exp_apply(Complex z, const BiState& x) const {
    const LinearRep& rep = linear_rep();
    if (rep.diagonal()) {
      BiState out = x;
      out.u.array() *= (z * rep.symbol.array()).exp();
      out.c.array() *= (z * rep.symbol.array().conjugate()).exp();
      return out;
    }
    const Eigen::MatrixXcd eu = (z * rep.dense).exp();
    const Eigen::MatrixXcd ec = (z * rep.dense.conjugate()).exp();
    return {eu * x.u, ec * x.c};
  }

  FieldOperator scaled(double a) const {
    FieldOperator self = *this;
    if (is_linear()) {
      LinearRep rep = *impl_->linear;
      if (rep.diagonal()) rep.symbol *= a;
      else rep.dense *= a;
      return from_linear(impl_->lat, std::move(rep));
    }
    return FieldOperator(
        impl_->lat, [self, a](const BiState& x) { return Complex(a) * self.eval(x); },
        [self, a](const BiState& x, const BiState& dx) { return Complex(a) * self.jvp(x, dx); }, impl_->degree);
  }

  /// Sum of fields; the jvp of the sum delegates to each term.
  friend FieldOperator operator+(const FieldOperator& a, const FieldOperator& b) {
    if (a.is_linear() && b.is_linear()) {
      const LinearRep& ra = a.linear_rep();
      const LinearRep& rb = b.linear_rep();
      LinearRep rep;
      if (ra.diagonal() && rb.diagonal()) rep.symbol = ra.symbol + rb.symbol;
      else rep.dense = ra.matrix() + rb.matrix();
      return from_linear(a.lattice(), std::move(rep));
    }
    std::optional<int> d;
    if (a.degree() && b.degree() && *a.degree() == *b.degree()) d = a.degree();
    return FieldOperator(
        a.lattice(), [a, b](const BiState& x) { return a.eval(x) + b.eval(x); },
        [a, b](const BiState& x, const BiState& dx) { return a.jvp(x, dx) + b.jvp(x, dx); }, d);
  }

 private:
  struct Impl {
    LatticePtr lat;
    EvalFn eval;
    JvpFn jvp;
    std::optional<int> degree;
    std::optional<LinearRep> linear;
  };

  static FieldOperator from_linear(LatticePtr lat, LinearRep rep) {
    auto shared = std::make_shared<const LinearRep>(std::move(rep));
    auto apply = [shared](const BiState& x) -> BiState {
      if (shared->diagonal()) {
        return {(shared->symbol.array() * x.u.array()).matrix(),
                (shared->symbol.array().conjugate() * x.c.array()).matrix()};
      }
      return {shared->dense * x.u, shared->dense.conjugate() * x.c};
    };
    FieldOperator out(
        std::move(lat), apply, [apply](const BiState&, const BiState& dx) { return apply(dx); }, 1);
    out.impl_->linear = *shared;
    return out;
  }

  // Exact for polynomial fields: the tau^1 coefficient of X(x + tau dx) on a
  // circle of d+1 points cannot alias with any other power up to d.
  BiState cauchy_jvp(const BiState& x, const BiState& dx, int degree) const {
    const Lattice& lat = *impl_->lat;
    const double ndx = bi_norm(lat, dx);
    if (ndx == 0.0) return BiState::zero(lat.dim());
    const double nx = bi_norm(lat, x);
    const double rho = (nx > 0.0 ? nx : 1.0) / ndx;
    const int m = std::max(2, degree + 1);
    BiState acc = BiState::zero(lat.dim());
    for (int j = 0; j < m; ++j) {
      const Complex tau = std::polar(rho, 2.0 * std::numbers::pi * j / m);
      BiState probe = x;
      probe.add_scaled(tau, dx);
      acc.add_scaled(1.0 / (double(m) * tau), eval(probe));
    }
    return acc;
  }

  BiState central_difference_jvp(const BiState& x, const BiState& dx) const {
    const Lattice& lat = *impl_->lat;
    const double ndx = bi_norm(lat, dx);
    if (ndx == 0.0) return BiState::zero(lat.dim());
    const double step = 1e-5 * std::max(1.0, bi_norm(lat, x));
    const double tau = step / ndx;
    BiState plus = x, minus = x;
    plus.add_scaled(tau, dx);
    minus.add_scaled(-tau, dx);
    BiState out = eval(plus) - eval(minus);
    out *= 1.0 / (2.0 * tau);
    return out;
  }

  std::shared_ptr<Impl> impl_;
};

/// [X,Y](u) = Y'(u)X(u) - X'(u)Y(u); for X = Bu, Y = Cu this is (CB - BC)u.
inline FieldOperator commutator(const FieldOperator& x, const FieldOperator& y) {
  if (x.is_linear() && y.is_linear()) {
    const auto& rx = x.linear_rep();
    const auto& ry = y.linear_rep();
    if (rx.diagonal() && ry.diagonal())
      return FieldOperator::spectral(x.lattice(), Eigen::VectorXcd::Zero(x.lattice()->dim()));
    const Eigen::MatrixXcd b = rx.matrix();
    const Eigen::MatrixXcd c = ry.matrix();
    const Eigen::MatrixXd& s = x.lattice()->sine_matrix();
    return FieldOperator::linear(x.lattice(), s * (c * b - b * c) * s);
  }
  std::optional<int> d;
  if (x.degree() && y.degree()) d = *x.degree() + *y.degree() - 1;
  return FieldOperator(
      x.lattice(), [x, y](const BiState& s) { return y.jvp(s, x.eval(s)) - x.jvp(s, y.eval(s)); }, {}, d);
}

}  // namespace nlselab
