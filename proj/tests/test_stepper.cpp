#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>
#include <vector>

#include "nlselab/bea.hpp"
#include "nlselab/initial_data.hpp"
#include "nlselab/stepper.hpp"
#include "support.hpp"

using namespace nlselab;
using nlselab::testing::dense_laplacian;
using nlselab::testing::loglog_slope;
using nlselab::testing::random_state_with_norm;

namespace {

const Complex I(0.0, 1.0);

SolverParams solver_with(double h, double fp_tol = 1e-13) {
  SolverParams s;
  s.h = h;
  s.fp_tol = fp_tol;
  return s;
}

FieldState bump(const Lattice& lat, double norm) { return make_initial_state(lat, InitSpec{InitKind::Bump, norm}); }

}  // namespace

TEST(Midpoint, LinearStepIsPropagator) {
  const auto lat = make_lattice({8, 0.5});
  std::mt19937_64 rng(1);
  const FieldState u = random_state_with_norm(*lat, rng, 2.0);
  const FieldState u1 = midpoint_step(lat, {0, 1}, solver_with(0.3), u).state;
  EXPECT_LT(norm_dx(*lat, u1 - apply_propagator(*lat, 0.3, u)), 1e-13);
}

TEST(Midpoint, SolvesImplicitEquation) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  std::mt19937_64 rng(2);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  const double h = 0.01;
  const auto res = midpoint_step(lat, p, solver_with(h), u);
  EXPECT_TRUE(res.diagnostics.converged);
  EXPECT_LE(res.diagnostics.final_residual, 1e-13);
  const FieldState& u1 = res.state;
  const FieldState mid = 0.5 * (u + u1);
  const FieldState rhs = u + I * h * (apply_laplacian(*lat, mid) + nonlinearity(p, mid));
  EXPECT_LT(norm_dx(*lat, u1 - rhs), 1e-11);
}

TEST(Midpoint, MassConservedOverThousandSteps) {
  const auto lat = make_lattice({16, 0.5});
  for (int lambda : {1, -1}) {
    const ModelParams p{lambda, 1};
    std::mt19937_64 rng(3);
    FieldState u = random_state_with_norm(*lat, rng, 1.0);
    const double m0 = mass(*lat, u);
    MidpointStepper stepper(lat, p, solver_with(0.01));
    double worst = 0.0;
    for (int n = 0; n < 1000; ++n) {
      stepper.step(u);
      worst = std::max(worst, std::abs(mass(*lat, u) - m0));
    }
    EXPECT_LE(worst, 1e-9) << "lambda=" << lambda;
  }
}

TEST(Midpoint, LocalErrorAgainstEulerPredictorIsSecondOrder) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  const FieldState u = bump(*lat, 1.0);
  std::vector<double> hs = {1e-2, 3e-3, 1e-3, 3e-4, 1e-4}, err;
  for (double h : hs) {
    const FieldState u1 = midpoint_step(lat, p, solver_with(h, 1e-15), u).state;
    err.push_back(norm_dx(*lat, u1 - (u + h * nlse_rhs(*lat, p, u))));
  }
  const double slope = loglog_slope(hs, err);
  EXPECT_GE(slope, 1.9);
  EXPECT_LE(slope, 2.1);
}

TEST(Midpoint, TimeSymmetric) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  std::mt19937_64 rng(4);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  const FieldState forward = midpoint_step(lat, p, solver_with(0.02), u).state;
  const FieldState back = midpoint_step(lat, p, solver_with(-0.02), forward).state;
  EXPECT_LE(norm_dx(*lat, back - u), 4e-13);
}

TEST(Midpoint, AndersonAgreesWithPicard) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  std::mt19937_64 rng(5);
  const FieldState u = random_state_with_norm(*lat, rng, 2.0);
  SolverParams plain = solver_with(0.02), accel = solver_with(0.02);
  accel.anderson_depth = 4;
  const auto a = midpoint_step(lat, p, plain, u);
  const auto b = midpoint_step(lat, p, accel, u);
  EXPECT_LE(norm_dx(*lat, a.state - b.state), 4e-13);
  EXPECT_LE(b.diagnostics.iterations, a.diagnostics.iterations);
}

TEST(Midpoint, IterationCountNonincreasingAsStepShrinks) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  const FieldState u = bump(*lat, 2.0);
  int last = 1 << 30;
  for (double h : {0.05, 0.02, 0.01, 0.005, 0.001}) {
    const int it = midpoint_step(lat, p, solver_with(h), u).diagnostics.iterations;
    EXPECT_LE(it, last) << "h=" << h;
    last = it;
  }
}

TEST(Midpoint, LargeStepRaisesNoConvergence) {
  const auto lat = make_lattice({8, 0.5});
  const FieldState u = bump(*lat, 20.0);
  SolverParams s = solver_with(0.5);
  s.max_iters = 50;
  try {
    midpoint_step(lat, {1, 1}, s, u);
    FAIL() << "expected NoConvergence";
  } catch (const NoConvergence& e) {
    EXPECT_GT(e.residual(), s.fp_tol);
    EXPECT_GT(e.iterations(), 0);
  }
}

TEST(Midpoint, RejectsNonFiniteState) {
  const auto lat = make_lattice({2, 1.0});
  FieldState u = FieldState::Zero(5);
  u(2) = std::nan("");
  EXPECT_THROW(midpoint_step(lat, {1, 1}, solver_with(0.1), u), ContractViolation);
}

TEST(Psi, ZeroEpsilonIsIdentity) {
  const auto lat = make_lattice({6, 0.5});
  std::mt19937_64 rng(6);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  EXPECT_LT(norm_dx(*lat, psi_map(lat, {1, 1}, 0.1, 0.0, u).state - u), 1e-14);
}

TEST(Psi, SplitFormMatchesMidpoint) {
  const auto lat = make_lattice({8, 0.5});
  const double fp_tol = 1e-13;
  for (int lambda : {1, -1}) {
    for (const auto kind : {InitKind::Bump, InitKind::Mode, InitKind::Noise}) {
      const ModelParams p{lambda, 1};
      const FieldState u = make_initial_state(*lat, InitSpec{kind, 1.0, 7, 3});
      const double h = 0.01;
      const FieldState direct = midpoint_step(lat, p, solver_with(h, fp_tol), u).state;
      const FieldState split = apply_propagator(*lat, h, psi_map(lat, p, h, h, u, fp_tol).state);
      EXPECT_LE(norm_dx(*lat, direct - split), 2 * fp_tol) << to_string(kind);
    }
  }
}

TEST(Psi, DifferenceQuotientConvergesLinearly) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  const FieldState u = bump(*lat, 1.0);
  const double h = 0.05;
  const FieldState lead = psi_leading_term(*lat, p, h, u);
  std::vector<double> eps = {1e-2, 3e-3, 1e-3, 3e-4, 1e-4}, err;
  for (double e : eps) {
    const FieldState v = psi_map(lat, p, h, e, u, 1e-16, 500).state;
    err.push_back(norm_dx(*lat, (v - u) / e - lead));
  }
  const double slope = loglog_slope(eps, err);
  EXPECT_GE(slope, 0.8);
  EXPECT_LE(slope, 1.2);
}

TEST(PsiLeading, ZeroStepIsNonlinearity) {
  const Lattice lat({5, 0.5});
  std::mt19937_64 rng(8);
  const FieldState u = random_state_with_norm(lat, rng, 1.0);
  EXPECT_LT((psi_leading_term(lat, {1, 1}, 0.0, u) - I * nonlinearity({1, 1}, u)).norm(), 1e-14);
  EXPECT_EQ(psi_leading_term(lat, {0, 1}, 0.1, u).norm(), 0.0);
}

TEST(PsiLeading, Homogeneous) {
  const Lattice lat({5, 0.5});
  std::mt19937_64 rng(9);
  const FieldState u = random_state_with_norm(lat, rng, 1.0);
  for (int r : {1, 2}) {
    const ModelParams p{1, r};
    const FieldState a = psi_leading_term(lat, p, 0.1, 2.0 * u);
    const FieldState b = std::pow(2.0, 2 * r + 1) * psi_leading_term(lat, p, 0.1, u);
    EXPECT_LT((a - b).norm(), 1e-12 * b.norm());
  }
}

TEST(ReferenceFlow, ZeroTimeIsIdentity) {
  const auto lat = make_lattice({4, 0.5});
  std::mt19937_64 rng(10);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  EXPECT_EQ(reference_flow(nlse_field(lat, {1, 1}), u, 0.0, 1e-12), u);
}

TEST(ReferenceFlow, LinearFieldMatchesPropagator) {
  const auto lat = make_lattice({8, 0.5});
  std::mt19937_64 rng(11);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  const double h = 0.02;
  const FieldState flow = reference_flow(a0_field(lat, h), u, h, 1e-13);
  EXPECT_LE(norm_dx(*lat, flow - apply_propagator(*lat, h, u)), 1e-12);
}

TEST(ReferenceFlow, LinearFieldMatchesDenseExponential) {
  const auto lat = make_lattice({4, 0.5});
  std::mt19937_64 rng(12);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  const double t = 0.3;
  const Eigen::MatrixXcd e = (I * t * dense_laplacian(*lat).cast<Complex>()).exp();
  EXPECT_LE(norm_dx(*lat, reference_flow(nlse_field(lat, {0, 1}), u, t, 1e-13) - e * u), 1e-11);
}

TEST(ReferenceFlow, ConservesEnergyOfFullField) {
  const auto lat = make_lattice({8, 0.5});
  const ModelParams p{1, 1};
  const FieldState u = bump(*lat, 1.0);
  const double ref_tol = 1e-12;
  const FieldOperator field = nlse_field(lat, p);
  const double e0 = energy(*lat, p, u);
  FieldState v = u;
  for (int i = 0; i < 4; ++i) {
    v = reference_flow(field, v, 0.25, ref_tol);
    EXPECT_LE(std::abs(energy(*lat, p, v) - e0), 10 * ref_tol);
  }
}

TEST(ReferenceFlow, BackwardTimeInverts) {
  const auto lat = make_lattice({6, 0.5});
  const FieldOperator field = nlse_field(lat, {1, 1});
  const FieldState u = bump(*lat, 1.0);
  const FieldState back = reference_flow(field, reference_flow(field, u, 0.2, 1e-13), -0.2, 1e-13);
  EXPECT_LE(norm_dx(*lat, back - u), 1e-12);
}

TEST(Rk2, LinearStepMatchesExponentialToThirdOrder) {
  const auto lat = make_lattice({4, 0.5});
  std::mt19937_64 rng(13);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0);
  const Eigen::MatrixXcd a = dense_laplacian(*lat).cast<Complex>();
  std::vector<double> hs = {1e-2, 5e-3, 2.5e-3, 1.25e-3}, err;
  for (double h : hs) err.push_back(norm_dx(*lat, rk2_explicit_step(*lat, {0, 1}, h, u) - (I * h * a).exp() * u));
  const double slope = loglog_slope(hs, err);
  EXPECT_GE(slope, 2.8);
  EXPECT_LE(slope, 3.2);
}

TEST(Rk2, ConsistentWithReferenceFlow) {
  const auto lat = make_lattice({4, 0.5});
  const ModelParams p{1, 1};
  const FieldState u = bump(*lat, 1.0);
  const FieldOperator field = nlse_field(lat, p);
  std::vector<double> hs = {1e-2, 5e-3, 2.5e-3, 1.25e-3}, err;
  for (double h : hs) err.push_back(norm_dx(*lat, rk2_explicit_step(*lat, p, h, u) - reference_flow(field, u, h, 1e-14)));
  EXPECT_GE(loglog_slope(hs, err), 2.8);  // local error h^3 means global order 2
}

TEST(Rk2, DoesNotConserveMass) {
  const auto lat = make_lattice({4, 0.5});
  const FieldState u = bump(*lat, 1.0);
  const FieldState u1 = rk2_explicit_step(*lat, {1, 1}, 0.01, u);
  EXPECT_GT(std::abs(mass(*lat, u1) - mass(*lat, u)), 1e-12);
}

TEST(NlseField, ExactJvpMatchesFiniteDifference) {
  const auto lat = make_lattice({4, 0.5});
  const FieldOperator field = nlse_field(lat, {-1, 2});
  std::mt19937_64 rng(14);
  const FieldState u = random_state_with_norm(*lat, rng, 1.0), du = random_state_with_norm(*lat, rng, 1.0);
  const double s = 1e-5;
  const FieldState fd = (field(u + s * du) - field(u - s * du)) / (2 * s);
  EXPECT_LT(norm_dx(*lat, field.jvp(u, du) - fd), 1e-6 * norm_dx(*lat, fd));
}
