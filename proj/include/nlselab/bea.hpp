#pragma once

// Backward error analysis for the split midpoint step R(hA) o Psi^h_h.
//
// With L = 2i arctan(hA/2) (the time-1 generator of R(hA)) and P_{h,eps} the
// Hamiltonian whose time-eps flow is Psi^h_eps, the generator Z(t, eps) of
// Phi^1_L o Phi^t_{P_{h,eps}} solves dZ/dt = sum_k B_k/k! ad^k_{-Z}(Q) where
// Q = X_{P o R*} is P conjugated by R (ad_X Y = [X, Y], bracket as in
// commutator()). Expanding in t and eps gives the Z_{l,j} fields below, and
// H_h^{(N)} = sum_{l+j <= N+1} h^{l+j-1} H(Z_{l,j}).
//
// ad-series with a linear generator are evaluated by contour integration:
// e^{s ad_X} Y (x) = e^{-sX} Y(e^{sX} x) is entire in s, so its Taylor
// coefficients (ad^k_X Y)/k! come from samples on a circle in the complex
// s-plane, using the bi-state continuation of field.hpp. This is exact up to
// aliasing and rounding, with cost linear in the number of samples.

#include <boost/math/special_functions/binomial.hpp>
#include <boost/multiprecision/cpp_int.hpp>
#include <boost/rational.hpp>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <optional>
#include <vector>

#include "nlselab/errors.hpp"
#include "nlselab/field.hpp"
#include "nlselab/lattice.hpp"
#include "nlselab/stepper.hpp"

namespace nlselab {

// ---------------------------------------------------------------- Bernoulli

/// B_k for x/(e^x - 1), so B_1 = -1/2. Valid for 0 <= k <= 32.
inline boost::rational<std::int64_t> bernoulli(int k) {
  if (k < 0 || k > 32) throw ContractViolation("bernoulli: k must be in [0, 32]");
  static const std::vector<boost::rational<std::int64_t>> table = [] {
    using boost::multiprecision::cpp_rational;
    using boost::multiprecision::cpp_int;
    std::vector<cpp_rational> b(33);
    b[0] = 1;
    for (int m = 1; m <= 32; ++m) {
      // sum_{j=0}^{m} C(m+1, j) B_j = 0
      cpp_rational acc = 0;
      cpp_int binom = 1;  // C(m+1, j)
      for (int j = 0; j < m; ++j) {
        acc += cpp_rational(binom) * b[j];
        binom = binom * (m + 1 - j) / (j + 1);
      }
      b[m] = -acc / (m + 1);
    }
    std::vector<boost::rational<std::int64_t>> out;
    for (const auto& v : b) {
      out.emplace_back(static_cast<std::int64_t>(boost::multiprecision::numerator(v)),
                       static_cast<std::int64_t>(boost::multiprecision::denominator(v)));
    }
    return out;
  }();
  return table[static_cast<std::size_t>(k)];
}

inline double bernoulli_value(int k) {
  const auto b = bernoulli(k);
  return static_cast<double>(b.numerator()) / static_cast<double>(b.denominator());
}

// ---------------------------------------------------------------- CFL

struct CflSpec {
  int N = 0;
  int r = 1;
  double eps_tilde = std::numbers::pi / 2;

  void validate() const {
    if (N < 0) throw ContractViolation("CflSpec: N must be >= 0");
    if (r < 1) throw ContractViolation("CflSpec: r must be >= 1");
    if (!(eps_tilde > 0.0 && eps_tilde < std::numbers::pi))
      throw ContractViolation("CflSpec: eps_tilde must lie in (0, pi)");
  }
};

inline double cfl_max_step(double delta_x, const CflSpec& spec) {
  spec.validate();
  if (!(delta_x > 0.0)) throw ContractViolation("cfl_max_step: delta_x must be positive");
  const double denom = 2.0 * (2.0 * spec.r * (spec.N + 1) + 1.0);
  return delta_x * delta_x * std::tan((std::numbers::pi - spec.eps_tilde) / denom);
}

// ---------------------------------------------------------------- A0 and P0

/// delta_x * conj(u)^T (2/h) arctan(hA/2) u.
inline double a0_energy(const Lattice& lat, double h, const FieldState& u) {
  require_dim(lat, u, "a0_energy");
  if (!(h > 0.0)) throw ContractViolation("a0_energy: h must be positive");
  const FieldState m = lat.to_modes(u);
  const Eigen::ArrayXd w = lat.eigenvalues().array().unaryExpr([h](double l) { return 2.0 / h * std::atan(h * l / 2.0); });
  return lat.dx() * (w * m.array().abs2()).sum();
}

/// Time-1 generator of R(hA): mode symbol 2i arctan(h lambda_j / 2).
inline FieldOperator propagator_generator(const LatticePtr& lat, double h) {
  return FieldOperator::spectral(
      lat, lat->eigenvalues().unaryExpr([h](double l) { return Complex(0.0, 2.0 * std::atan(h * l / 2.0)); }));
}

/// u -> (2i/h) arctan(hA/2) u; its time-h flow is R(hA).
inline FieldOperator a0_field(const LatticePtr& lat, double h) {
  if (!(h > 0.0)) throw ContractViolation("a0_field: h must be positive");
  return propagator_generator(lat, h).scaled(1.0 / h);
}

inline double p0_energy(const Lattice& lat, const ModelParams& params, double h, const FieldState& u) {
  require_dim(lat, u, "p0_energy");
  if (params.lambda == 0) return 0.0;
  const FieldState w = apply_cayley_resolvent(lat, h, ResolventSign::Minus, u);
  return params.lambda / (params.r + 1.0) * power_sum(lat, w, params.r);
}

namespace detail {

// Pieces of X_{P0,h}(x) = i lambda C+ f(C- x) on bi-states, with
// C+- = (1 +- ihA/2)^{-1} and f(u, c) = lambda u^{r+1} c^r.
struct P0Kernel {
  LatticePtr lat;
  double lambda;
  int r;
  Eigen::VectorXcd c_minus, c_plus;

  P0Kernel(LatticePtr l, const ModelParams& p, double h)
      : lat(std::move(l)),
        lambda(p.lambda),
        r(p.r),
        c_minus(lat->resolvent_symbol(h, -1)),
        c_plus(lat->resolvent_symbol(h, +1)) {}

  // physical values of C- applied to a mode-space bi-state
  void resolve(const BiState& x, FieldState& wu, FieldState& wc) const {
    lat->transform((c_minus.array() * x.u.array()).matrix(), wu);
    lat->transform((c_minus.array().conjugate() * x.c.array()).matrix(), wc);
  }

  // i C+ applied to physical (gu, gc), returned in modes
  BiState finish(const FieldState& gu, const FieldState& gc) const {
    BiState out;
    lat->transform(gu, out.u);
    lat->transform(gc, out.c);
    out.u.array() *= Complex(0.0, 1.0) * c_plus.array();
    out.c.array() *= Complex(0.0, -1.0) * c_plus.array().conjugate();
    return out;
  }

  BiState eval(const BiState& x) const {
    FieldState wu, wc;
    resolve(x, wu, wc);
    const Eigen::ArrayXcd mr = ipow(Eigen::ArrayXcd(wu.array() * wc.array()), r);
    return finish((lambda * mr * wu.array()).matrix(), (lambda * mr * wc.array()).matrix());
  }

  // lambda f'(w)[d] in physical coordinates for already resolved w and d
  void nonlinear_jvp(const FieldState& wu, const FieldState& wc, const FieldState& du, const FieldState& dc,
                     FieldState& gu, FieldState& gc) const {
    const Eigen::ArrayXcd prod = wu.array() * wc.array();
    const Eigen::ArrayXcd m1 = ipow(prod, r - 1);
    const Eigen::ArrayXcd m = m1 * prod;
    gu = (lambda * ((r + 1.0) * m * du.array() + r * m1 * wu.array().square() * dc.array())).matrix();
    gc = (lambda * ((r + 1.0) * m * dc.array() + r * m1 * wc.array().square() * du.array())).matrix();
  }

  BiState jvp(const BiState& x, const BiState& dx) const {
    FieldState wu, wc, du, dc, gu, gc;
    resolve(x, wu, wc);
    resolve(dx, du, dc);
    nonlinear_jvp(wu, wc, du, dc, gu, gc);
    return finish(gu, gc);
  }
};

}  // namespace detail

/// X_{P0,h}(u) = i lambda (1 + ihA/2)^{-1}(|w|^{2r} w), w = (1 - ihA/2)^{-1} u. Exact jvp.
inline FieldOperator p0_field(const LatticePtr& lat, const ModelParams& params, double h) {
  params.validate();
  const int degree = 2 * params.r + 1;
  if (params.lambda == 0) return FieldOperator::zero(lat, degree);
  auto k = std::make_shared<const detail::P0Kernel>(lat, params, h);
  return FieldOperator(
      lat, [k](const BiState& x) { return k->eval(x); },
      [k](const BiState& x, const BiState& dx) { return k->jvp(x, dx); }, degree);
}

/// Second eps-coefficient of P_{h,eps} as a field, from the Taylor expansion
/// of the Psi fixed point: X_{P1} = Psi_2 - (1/2) X_{P0}'[X_{P0}], where
/// Psi_2 = i C+ f'(w)[R(hA) Psi_1 / 2] and Psi_1 = X_{P0}.
inline FieldOperator p1_field(const LatticePtr& lat, const ModelParams& params, double h) {
  params.validate();
  const int degree = 4 * params.r + 1;
  if (params.lambda == 0) return FieldOperator::zero(lat, degree);
  auto k = std::make_shared<const detail::P0Kernel>(lat, params, h);
  auto half_rot = std::make_shared<const Eigen::VectorXcd>(0.5 * lat->propagator_symbol(h));
  auto eval = [k, half_rot](const BiState& x) {
    const BiState psi1 = k->eval(x);
    FieldState wu, wc, au, ac, gu, gc;
    k->resolve(x, wu, wc);
    k->lat->transform((half_rot->array() * psi1.u.array()).matrix(), au);
    k->lat->transform((half_rot->array().conjugate() * psi1.c.array()).matrix(), ac);
    k->nonlinear_jvp(wu, wc, au, ac, gu, gc);
    BiState out = k->finish(gu, gc);
    out.add_scaled(-0.5, k->jvp(x, psi1));
    return out;
  };
  return FieldOperator(lat, eval, {}, degree);
}

/// u -> R(hA) X(R(hA)* u).
inline FieldOperator conjugate_field(const FieldOperator& x, double h) {
  const FieldOperator gen = propagator_generator(x.lattice(), h);
  if (x.is_linear() && x.linear_rep().diagonal()) return x;
  return FieldOperator(
      x.lattice(), [x, gen](const BiState& s) { return gen.exp_apply(1.0, x.eval(gen.exp_apply(-1.0, s))); },
      [x, gen](const BiState& s, const BiState& ds) {
        return gen.exp_apply(1.0, x.jvp(gen.exp_apply(-1.0, s), gen.exp_apply(-1.0, ds)));
      },
      x.degree());
}

/// 2 delta_x Im(conj(u)^T X(u)) / (d+1) for a Hamiltonian field homogeneous of degree d.
inline double hamiltonian_from_field(const Lattice& lat, const FieldOperator& x, const FieldState& u) {
  if (!x.degree()) throw ContractViolation("hamiltonian_from_field: field has no degree metadata");
  require_dim(lat, u, "hamiltonian_from_field");
  const FieldState xu = x(u);
  return 2.0 * lat.dx() * u.dot(xu).imag() / (*x.degree() + 1.0);
}

// ---------------------------------------------------------------- ad-series

struct SeriesOptions {
  double tol = 1e-12;
  int k_max = 24;
};

/// Term-by-term record of an ad-series at one point.
struct SeriesProbe {
  std::vector<int> k;               ///< indices with B_k != 0, in order
  std::vector<double> term_norm;    ///< ||B_k/k! ad^k Y (u)||_dx
  std::vector<double> ratio;        ///< (|t_k| / |t_k'|)^{1/(k-k')} against the previous listed term
  int truncation = 0;               ///< last index included under the truncation rule
  bool non_decaying = false;        ///< three consecutive ratios above 1
  int first_non_decaying = -1;
};

namespace detail {

inline int contour_points(int k_max) { return std::max(32, k_max + 8); }

inline std::vector<Complex> unit_roots(int m) {
  std::vector<Complex> z(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) z[static_cast<std::size_t>(j)] = std::polar(1.0, 2.0 * std::numbers::pi * j / m);
  return z;
}

inline bool on_real_slice(const BiState& x) { return (x.c.array() == x.u.array().conjugate()).all(); }

inline BiState swap_conj(const BiState& x) { return {x.c.conjugate(), x.u.conjugate()}; }

// Samples G_j = e^{-z_j X} Y(e^{z_j X} x) on the unit circle. On the real
// slice G(conj z) = swap_conj(G(z)), which halves the work.
inline std::vector<BiState> rotated_samples(const FieldOperator& gen, const FieldOperator& y, const BiState& x,
                                            const std::vector<Complex>& z) {
  const int m = static_cast<int>(z.size());
  std::vector<BiState> g(static_cast<std::size_t>(m));
  const bool sym = on_real_slice(x);
  for (int j = 0; j < m; ++j) {
    if (sym && j > m / 2) {
      g[static_cast<std::size_t>(j)] = swap_conj(g[static_cast<std::size_t>(m - j)]);
      continue;
    }
    g[static_cast<std::size_t>(j)] = gen.exp_apply(-z[j], y.eval(gen.exp_apply(z[j], x)));
  }
  return g;
}

inline std::vector<BiState> rotated_jvp_samples(const FieldOperator& gen, const FieldOperator& y,
                                                const BiState& x, const BiState& dx,
                                                const std::vector<Complex>& z) {
  const int m = static_cast<int>(z.size());
  std::vector<BiState> g(static_cast<std::size_t>(m));
  const bool sym = on_real_slice(x) && on_real_slice(dx);
  for (int j = 0; j < m; ++j) {
    if (sym && j > m / 2) {
      g[static_cast<std::size_t>(j)] = swap_conj(g[static_cast<std::size_t>(m - j)]);
      continue;
    }
    g[static_cast<std::size_t>(j)] =
        gen.exp_apply(-z[j], y.jvp(gen.exp_apply(z[j], x), gen.exp_apply(z[j], dx)));
  }
  return g;
}

inline BiState taylor_coefficient(const std::vector<BiState>& g, const std::vector<Complex>& z, int k) {
  const int m = static_cast<int>(z.size());
  BiState acc = BiState::zero(static_cast<int>(g[0].u.size()));
  for (int j = 0; j < m; ++j) {
    // z_j^{-k} = conj(z_j)^k on the unit circle; reduce the exponent mod m
    acc.add_scaled(std::conj(z[static_cast<std::size_t>((static_cast<long>(j) * k) % m)]) / double(m),
                   g[static_cast<std::size_t>(j)]);
  }
  return acc;
}

// Sums B_k * coeff(k) with the truncation and decay rules; `coeff(k)` returns
// the k-th Taylor coefficient of s -> e^{s ad} Y, i.e. ad^k Y / k!.
template <class Coeff>
BiState bernoulli_sum(const Lattice& lat, Coeff&& coeff, const SeriesOptions& opts, SeriesProbe* probe,
                      bool throw_on_growth) {
  BiState partial = coeff(0);
  double prev_norm = bi_norm(lat, partial);
  int prev_k = 0;
  int streak = 0;
  if (probe) {
    probe->k = {0};
    probe->term_norm = {prev_norm};
    probe->ratio = {0.0};
    probe->truncation = 0;
  }
  for (int k = 1; k <= opts.k_max; ++k) {
    const double b = bernoulli_value(k);
    if (b == 0.0) continue;
    BiState term = coeff(k);
    term *= b;
    const double tn = bi_norm(lat, term);
    const double ratio =
        prev_norm > 0.0 ? std::pow(tn / prev_norm, 1.0 / (k - prev_k)) : (tn > 0.0 ? INFINITY : 0.0);
    streak = ratio > 1.0 ? streak + 1 : 0;
    partial += term;
    const double pn = bi_norm(lat, partial);
    if (probe) {
      probe->k.push_back(k);
      probe->term_norm.push_back(tn);
      probe->ratio.push_back(ratio);
      probe->truncation = k;
      if (streak >= 3 && !probe->non_decaying) {
        probe->non_decaying = true;
        probe->first_non_decaying = k;
      }
    }
    if (streak >= 3 && throw_on_growth)
      throw NonDecayingSeries("ad-series terms grow for three consecutive orders (CFL violated?)", k);
    prev_norm = tn;
    prev_k = k;
    if (tn <= opts.tol * pn) break;
  }
  return partial;
}

}  // namespace detail

/// u -> sum_k B_k/k! ad^k_{Xz}(Y)(u), truncated at the first term below
/// tol * |partial sum| or at k_max.
inline FieldOperator ad_series(const FieldOperator& xz, const FieldOperator& y, double tol = 1e-12,
                               int k_max = 24) {
  if (k_max < 0 || k_max > 32) throw ContractViolation("ad_series: k_max must be in [0, 32]");
  const SeriesOptions opts{tol, k_max};
  const LatticePtr lat = y.lattice();
  if (xz.is_linear()) {
    const auto z = std::make_shared<const std::vector<Complex>>(detail::unit_roots(detail::contour_points(k_max)));
    auto eval = [xz, y, z, opts, lat](const BiState& x) {
      const auto g = detail::rotated_samples(xz, y, x, *z);
      return detail::bernoulli_sum(
          *lat, [&](int k) { return detail::taylor_coefficient(g, *z, k); }, opts, nullptr, true);
    };
    auto jvp = [xz, y, z, opts, lat](const BiState& x, const BiState& dx) {
      const auto g = detail::rotated_jvp_samples(xz, y, x, dx, *z);
      return detail::bernoulli_sum(
          *lat, [&](int k) { return detail::taylor_coefficient(g, *z, k); }, opts, nullptr, false);
    };
    return FieldOperator(lat, eval, jvp, y.degree());
  }
  // Nonlinear generator: nested commutators with numerical jvps. Cost grows
  // geometrically in k, so keep k_max small here.
  auto terms = std::make_shared<std::vector<FieldOperator>>();
  terms->push_back(y);
  for (int k = 1; k <= k_max; ++k) terms->push_back(commutator(xz, terms->back()));
  auto factorial = [](int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
  };
  auto eval = [terms, opts, lat, factorial](const BiState& x) {
    return detail::bernoulli_sum(
        *lat, [&](int k) { return Complex(1.0 / factorial(k)) * (*terms)[static_cast<std::size_t>(k)].eval(x); },
        opts, nullptr, true);
  };
  std::optional<int> degree;
  if (xz.degree() && y.degree()) {
    if (*xz.degree() == 1) degree = y.degree();
  }
  return FieldOperator(lat, eval, {}, degree);
}

/// Term norms and ratios of ad_series(xz, y) at a physical state (linear xz).
inline SeriesProbe probe_ad_series(const FieldOperator& xz, const FieldOperator& y, const FieldState& u,
                                   const SeriesOptions& opts = {}) {
  if (!xz.is_linear()) throw Unsupported("probe_ad_series: generator must be linear");
  const Lattice& lat = *y.lattice();
  const auto z = detail::unit_roots(detail::contour_points(opts.k_max));
  const auto g = detail::rotated_samples(xz, y, BiState::real_slice(lat.to_modes(u)), z);
  SeriesProbe probe;
  detail::bernoulli_sum(lat, [&](int k) { return detail::taylor_coefficient(g, z, k); }, opts, &probe, false);
  return probe;
}

// ---------------------------------------------------------------- second order

namespace detail {

// Taylor coefficients c_ab of K2(x, y) = f(x) (f(x+y) - f(y)) / x with
// f(x) = x/(e^x - 1), for a + b <= order.
inline std::vector<std::vector<double>> second_order_kernel(int order) {
  std::vector<double> phi(static_cast<std::size_t>(order + 2));
  double fact = 1.0;
  for (int k = 0; k <= order + 1; ++k) {
    if (k > 0) fact *= k;
    phi[static_cast<std::size_t>(k)] = bernoulli_value(k) / fact;
  }
  auto d = [&](int a, int b) {
    const int k = a + b + 1;
    return phi[static_cast<std::size_t>(k)] * boost::math::binomial_coefficient<double>(k, a + 1);
  };
  std::vector<std::vector<double>> c(static_cast<std::size_t>(order + 1),
                                     std::vector<double>(static_cast<std::size_t>(order + 1), 0.0));
  for (int a = 0; a <= order; ++a) {
    for (int b = 0; a + b <= order; ++b) {
      double acc = 0.0;
      for (int i = 0; i <= a; ++i) acc += phi[static_cast<std::size_t>(i)] * d(a - i, b);
      c[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = acc;
    }
  }
  return c;
}

}  // namespace detail

/// Second t-coefficient of the generator: returns
///   sign/2 * sum_k B_k/k! sum_a ad_X^a ad_{Z1} ad_X^{k-1-a} Y,
/// with Z1 = sum_k B_k/k! ad_X^k Y, for a linear generator X. This is Z_{2,0}
/// with (X, Y, sign) = (-L, P0 o R*, -1), or equivalently (L, P0, +1).
inline FieldOperator bch_second_order(const FieldOperator& gen, const FieldOperator& y, double sign,
                                      int order = 20) {
  if (!gen.is_linear()) throw Unsupported("bch_second_order: generator must be linear");
  const LatticePtr lat = y.lattice();
  const int m = 32;
  const auto z = std::make_shared<const std::vector<Complex>>(detail::unit_roots(m));
  const auto c = detail::second_order_kernel(order);
  // W_pq = 1/m^2 sum_ab c_ab a! b! z_p^{-a} z_q^{-b}
  auto w = std::make_shared<Eigen::MatrixXcd>(Eigen::MatrixXcd::Zero(m, m));
  {
    std::vector<double> fact(static_cast<std::size_t>(order + 1), 1.0);
    for (int i = 1; i <= order; ++i) fact[static_cast<std::size_t>(i)] = fact[static_cast<std::size_t>(i - 1)] * i;
    for (int a = 0; a <= order; ++a) {
      for (int b = 0; a + b <= order; ++b) {
        const double cab = c[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] *
                           fact[static_cast<std::size_t>(a)] * fact[static_cast<std::size_t>(b)];
        if (cab == 0.0) continue;
        for (int p = 0; p < m; ++p) {
          const Complex zp = std::conj((*z)[static_cast<std::size_t>((static_cast<long>(p) * a) % m)]);
          for (int q = 0; q < m; ++q) {
            const Complex zq = std::conj((*z)[static_cast<std::size_t>((static_cast<long>(q) * b) % m)]);
            (*w)(p, q) += cab * zp * zq;
          }
        }
      }
    }
    *w /= double(m) * m;
  }
  auto eval = [gen, y, z, w, sign, m](const BiState& x) {
    // sum_pq W_pq [Y_p, Y_q](x) = sum_j Y_j'(x)[A_j - B_j],
    // A_q = sum_p W_pq Y_p(x), B_p = sum_q W_pq Y_q(x), Y_p = e^{z_p ad} Y.
    const auto yp = detail::rotated_samples(gen, y, x, *z);
    const int n = static_cast<int>(x.u.size());
    BiState out = BiState::zero(n);
    for (int j = 0; j < m; ++j) {
      BiState dir = BiState::zero(n);
      for (int p = 0; p < m; ++p) {
        dir.add_scaled((*w)(p, j) - (*w)(j, p), yp[static_cast<std::size_t>(p)]);
      }
      const Complex zj = (*z)[static_cast<std::size_t>(j)];
      out += gen.exp_apply(-zj, y.jvp(gen.exp_apply(zj, x), gen.exp_apply(zj, dir)));
    }
    out *= 0.5 * sign;
    return out;
  };
  std::optional<int> degree;
  if (y.degree()) degree = 2 * *y.degree() - 1;
  return FieldOperator(lat, eval, {}, degree);
}

// ---------------------------------------------------------------- Z fields

/// Z_{l,j} in the time-1 convention (so H_h^{(N)} = sum h^{l+j-1} H(Z_{l,j})).
/// Supported: (0,0), (1,0), (1,1), (2,0).
inline FieldOperator z_field(const LatticePtr& lat, const ModelParams& params, double h, int ell, int j,
                             const SeriesOptions& opts = {}) {
  params.validate();
  const FieldOperator gen = propagator_generator(lat, h);
  const FieldOperator minus_gen = gen.scaled(-1.0);
  const int r = params.r;
  if (ell == 0 && j == 0) return gen;
  if (params.lambda == 0) return FieldOperator::zero(lat, 2 * r * (ell + j) + 1);
  if (ell == 1 && j == 0)
    return ad_series(minus_gen, conjugate_field(p0_field(lat, params, h), h), opts.tol, opts.k_max);
  if (ell == 1 && j == 1)
    return ad_series(minus_gen, conjugate_field(p1_field(lat, params, h), h), opts.tol, opts.k_max);
  if (ell == 2 && j == 0) return bch_second_order(minus_gen, conjugate_field(p0_field(lat, params, h), h), -1.0);
  throw Unsupported("z_field: (" + std::to_string(ell) + "," + std::to_string(j) + ") is not implemented");
}

// ---------------------------------------------------------------- H_h^{(N)}

struct BeaOptions {
  SeriesOptions series;
  double eps_tilde = std::numbers::pi / 2;
  bool enforce_cfl = true;
};

/// H_h^{(N)} for N in {0, 1}, with its vector field (time-h convention: its
/// time-h flow approximates one midpoint step to O(h^{N+2})).
class ModifiedEnergy {
 public:
  ModifiedEnergy(LatticePtr lat, ModelParams params, double h, int order, BeaOptions opts = {})
      : lat_(std::move(lat)), params_(params), h_(h), order_(order) {
    params_.validate();
    if (!(h > 0.0)) throw ContractViolation("modified energy: h must be positive");
    if (order < 0 || order > 1) throw Unsupported("modified energy: only N = 0 and N = 1 are implemented");
    if (opts.enforce_cfl) {
      const double hmax = cfl_max_step(lat_->dx(), CflSpec{order, params_.r, opts.eps_tilde});
      if (h > hmax) throw CflViolation(h, hmax);
    }
    a0_ = a0_field(lat_, h);
    z10_ = z_field(lat_, params_, h, 1, 0, opts.series);
    field_ = *a0_ + *z10_;
    if (order_ == 1) {
      second_ = z_field(lat_, params_, h, 2, 0, opts.series) + z_field(lat_, params_, h, 1, 1, opts.series);
      field_ = *field_ + second_->scaled(h);
    }
  }

  double operator()(const FieldState& u) const {
    double e = a0_energy(*lat_, h_, u) + hamiltonian_from_field(*lat_, *z10_, u);
    if (order_ == 1) e += h_ * hamiltonian_from_field(*lat_, *second_, u);
    return e;
  }

  const FieldOperator& field() const { return *field_; }
  int order() const { return order_; }
  double h() const { return h_; }

 private:
  LatticePtr lat_;
  ModelParams params_;
  double h_;
  int order_;
  std::optional<FieldOperator> a0_, z10_, second_, field_;
};

inline double modified_energy(const LatticePtr& lat, const ModelParams& params, double h, int order,
                              const FieldState& u, const BeaOptions& opts = {}) {
  return ModifiedEnergy(lat, params, h, order, opts)(u);
}

// ---------------------------------------------------------------- P1 by fitting

struct RemainderFit {
  FieldState field;          ///< X_{P1,h}(u)
  double residual = 0.0;     ///< least-squares residual relative to the data
  double c0 = 0.0;           ///< |eps^0 coefficient| relative to |eps^2 coefficient| * eps0^2
  double c1 = 0.0;           ///< |eps^1 coefficient| * eps0 relative to the same
  double eps0 = 0.0;
};

struct RemainderOptions {
  double fit_tol = 1e-4;
  double ref_tol = 1e-15;
  double fp_tol = 1e-15;
};

/// X_{P1,h}(u) as the eps^2 coefficient of Psi^h_eps(u) - Phi^eps_{P0,h}(u),
/// from a degree-4 least-squares fit over eps0 / 2^i, i = 0..5.
inline RemainderFit extract_remainder_field(const LatticePtr& lat, const ModelParams& params, double h,
                                            const FieldState& u, const RemainderOptions& opts = {}) {
  require_dim(*lat, u, "extract_remainder_field");
  params.validate();
  RemainderFit out;
  const int n = lat->dim();
  if (params.lambda == 0) {
    out.field = FieldState::Zero(n);
    return out;
  }
  const double nu = norm_dx(*lat, u);
  out.eps0 = nu > 0.0 ? std::min(h, 0.1 * std::pow(nu, -2.0 * params.r)) : h;
  const FieldOperator p0 = p0_field(lat, params, h);
  constexpr int points = 6;
  constexpr int degree = 4;
  Eigen::MatrixXd v(points, degree + 1);
  Eigen::MatrixXcd data(points, n);
  for (int i = 0; i < points; ++i) {
    const double s = std::ldexp(1.0, -i);
    const double eps = out.eps0 * s;
    for (int p = 0; p <= degree; ++p) v(i, p) = std::pow(s, p);
    const FieldState psi = psi_map(lat, params, h, eps, u, opts.fp_tol, 500).state;
    const FieldState phi = reference_flow(p0, u, eps, opts.ref_tol);
    data.row(i) = (psi - phi).transpose();
  }
  const Eigen::MatrixXcd coef = v.cast<Complex>().colPivHouseholderQr().solve(data);
  const Eigen::MatrixXcd resid = v.cast<Complex>() * coef - data;
  auto rows_norm = [&](const Eigen::MatrixXcd& m) {
    double acc = 0.0;
    for (int i = 0; i < m.rows(); ++i) {
      const double t = norm_dx(*lat, m.row(i).transpose());
      acc += t * t;
    }
    return std::sqrt(acc);
  };
  const double data_norm = rows_norm(data);
  out.residual = data_norm > 0.0 ? rows_norm(resid) / data_norm : 0.0;
  const double c2n = norm_dx(*lat, coef.row(2).transpose());
  if (c2n > 0.0) {
    out.c0 = norm_dx(*lat, coef.row(0).transpose()) / c2n;
    out.c1 = norm_dx(*lat, coef.row(1).transpose()) / c2n;
  }
  out.field = coef.row(2).transpose() / (out.eps0 * out.eps0);
  if (out.residual > opts.fit_tol)
    throw IllConditionedFit("extract_remainder_field: fit residual " + std::to_string(out.residual) +
                                " exceeds tolerance",
                            out.residual);
  return out;
}

}  // namespace nlselab
