#include "mrcbf/barrier.hpp"
#include "mrcbf/brute_force.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mrcbf;

namespace {

State segway_state(double th, double thd) {
  State x = State::Zero(4);
  x[segway_index::theta] = th;
  x[segway_index::theta_dot] = thd;
  return x;
}

BarrierFunction linear_barrier(const RowVector& c, double offset, double gain = 1.0) {
  BarrierFunction bf;
  bf.h = [c, offset](const State& x) { return c.dot(x) + offset; };
  bf.grad_h = [c](const State&) { return c; };
  bf.alpha = ExtendedClassK::linear(gain);
  return bf;
}

}  // namespace

TEST(ClassK, LinearIsZeroAtZeroAndIncreasing) {
  const auto a = ExtendedClassK::linear(3.0);
  EXPECT_EQ(a(0.0), 0.0);
  for (double r = -2.0; r < 2.0; r += 0.01) EXPECT_LT(a(r), a(r + 0.01));
  EXPECT_THROW(ExtendedClassK::linear(0.0), std::invalid_argument);
}

TEST(SegwayBarriers, ValuesAtEquilibrium) {
  SegwayBarrierConfig cfg;
  cfg.c = 0.1;
  cfg.alpha_e = 2.0;
  const auto [h1, h2] = segway_barriers(cfg);
  const State x = segway_state(cfg.theta_star, 0.0);
  EXPECT_NEAR(h1.value(x), 0.2, 1e-15);
  EXPECT_NEAR(h2.value(x), 0.2, 1e-15);
  EXPECT_NEAR(h1.value(segway_state(cfg.theta_star, cfg.alpha_e * cfg.c)), 0.0, 1e-15);
}

TEST(SegwayBarriers, GradientsAreOppositeAndMatchFiniteDifferences) {
  const auto [h1, h2] = segway_barriers({});
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    State x(4);
    for (int i = 0; i < 4; ++i) x[i] = U(rng);
    EXPECT_LT((h1.gradient(x) + h2.gradient(x)).norm(), 1e-15);
    for (const auto* bf : {&h1, &h2}) {
      const RowVector g = bf->gradient(x);
      for (int i = 0; i < 4; ++i) {
        State xp = x, xm = x;
        xp[i] += 1e-6;
        xm[i] -= 1e-6;
        const double fd = (bf->value(xp) - bf->value(xm)) / 2e-6;
        EXPECT_NEAR(g[i], fd, 1e-6 * (1.0 + std::abs(fd)));
      }
    }
  }
}

TEST(BooleanComposition, MinimumOfValues) {
  EXPECT_EQ(boolean_composition({0.3, -0.1}), -0.1);
  EXPECT_EQ(boolean_composition({0.2, 0.2}), 0.2);
  EXPECT_THROW(boolean_composition(std::vector<double>{}), std::invalid_argument);
}

TEST(LieDerivatives, SingleIntegratorOnLastCoordinate) {
  const auto sys = linear_system(Matrix::Zero(4, 4), Matrix::Identity(4, 4).rightCols(1));
  RowVector c = RowVector::Zero(4);
  c[3] = 1.0;
  const auto lie = lie_derivatives(linear_barrier(c, 0.0), sys, State::Random(4));
  EXPECT_EQ(lie.Lfh, 0.0);
  EXPECT_EQ(lie.Lgh.size(), 1);
  EXPECT_EQ(lie.Lgh[0], 1.0);
}

TEST(LieDerivatives, ZeroGradientGivesZero) {
  const auto sys = segway_system({});
  const auto lie = lie_derivatives(linear_barrier(RowVector::Zero(4), 1.0), sys, State::Random(4));
  EXPECT_EQ(lie.Lfh, 0.0);
  EXPECT_EQ(lie.Lgh.norm(), 0.0);
}

TEST(LieDerivatives, SegwayAtEquilibriumHasNoDriftTerm) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  EXPECT_NEAR(lie_derivatives(h1, sys, sys.equilibrium).Lfh, 0.0, 1e-15);
  EXPECT_NEAR(lie_derivatives(h2, sys, sys.equilibrium).Lfh, 0.0, 1e-15);
}

TEST(Lipschitz, LinearFunctionGivesLargestCoefficient) {
  const Box box(Vector::Constant(3, -1.0), Vector::Constant(3, 2.0), 7);
  RowVector c(3);
  c << 0.5, -3.0, 2.0;
  const double slope = max_adjacent_slope(box, [&](const State& x) { return Vector::Constant(1, c.dot(x)); });
  EXPECT_NEAR(slope, 3.0, 1e-12);
  EXPECT_EQ(max_adjacent_slope(box, [](const State&) { return Vector::Constant(1, 4.0); }), 0.0);
}

TEST(Lipschitz, DegenerateAxesContributeNothing) {
  Vector lo(2), hi(2);
  lo << 0.0, 1.0;
  hi << 1.0, 1.0;
  const Box box(lo, hi, 5);
  EXPECT_EQ(box.active_dims(), 1);
  const double slope = max_adjacent_slope(box, [](const State& x) { return Vector::Constant(1, 2.0 * x[0] + 9.0 * x[1]); });
  EXPECT_NEAR(slope, 2.0, 1e-12);
}

TEST(Lipschitz, NonFiniteEvaluationThrows) {
  const Box box(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0), 3);
  EXPECT_THROW(max_adjacent_slope(box, [](const State& x) { return Vector::Constant(1, 1.0 / x[0]); }),
               std::runtime_error);
}

TEST(Lipschitz, SegwayBundleIsStableUnderRefinement) {
  const SegwayBarrierConfig cfg;
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers(cfg);
  Vector lo(4), hi(4);
  lo << 0.0, 0.0, cfg.theta_star - 0.3, -1.0;
  hi << 0.0, 0.0, cfg.theta_star + 0.3, 1.0;
  const auto coarse = estimate_lipschitz(h1, sys, Box(lo, hi, 21));
  const auto fine = estimate_lipschitz(h1, sys, Box(lo, hi, 41));
  EXPECT_GT(coarse.L_Lfh, 0.0);
  EXPECT_GT(coarse.L_Lgh, 0.0);
  EXPECT_NEAR(coarse.L_alpha_h, 1.2 * cfg.alpha_gain * cfg.alpha_e, 1e-9);
  EXPECT_LT(std::abs(fine.L_Lfh - coarse.L_Lfh), 0.05 * coarse.L_Lfh);
  EXPECT_LT(std::abs(fine.L_Lgh - coarse.L_Lgh), 0.05 * coarse.L_Lgh);
}

TEST(Lipschitz, MonotoneOnNestedBoxes) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  Vector lo(4), hi(4);
  lo << 0.0, 0.0, -0.2, -0.5;
  hi << 0.0, 0.0, 0.4, 0.5;
  const auto inner = estimate_lipschitz(h1, sys, Box(lo, hi, 13));
  // Same spacing, box extended by two cells on every active side.
  Vector lo2 = lo, hi2 = hi;
  lo2[2] -= 0.1;
  hi2[2] += 0.1;
  lo2[3] -= 2.0 / 12.0;
  hi2[3] += 2.0 / 12.0;
  const auto outer = estimate_lipschitz(h1, sys, Box(lo2, hi2, 17));
  EXPECT_GE(outer.L_Lfh, inner.L_Lfh - 1e-12);
  EXPECT_GE(outer.L_Lgh, inner.L_Lgh - 1e-12);
}

TEST(CbfQp, InactiveConstraintReturnsDesiredInput) {
  const std::vector<AffineConstraint> cons{{RowVector::Constant(1, 1.0), -5.0}};
  const auto res = min_norm_filter(cons, Input::Constant(1, 2.0));
  EXPECT_TRUE(res.feasible());
  EXPECT_EQ(res.input[0], 2.0);
}

TEST(CbfQp, ProjectionOntoHalfLine) {
  // Lfh = 0, Lgh = 1, alpha(h) = 0, u_des = -1 -> u = 0.
  const std::vector<AffineConstraint> cons{{RowVector::Constant(1, 1.0), 0.0}};
  const auto res = min_norm_filter(cons, Input::Constant(1, -1.0));
  EXPECT_TRUE(res.feasible());
  EXPECT_NEAR(res.input[0], 0.0, 1e-15);
}

TEST(CbfQp, SingleConstraintClosedForm) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (int k = 0; k < 200; ++k) {
    RowVector a(3);
    for (int i = 0; i < 3; ++i) a[i] = U(rng);
    const double b = U(rng);
    Input ud(3);
    for (int i = 0; i < 3; ++i) ud[i] = U(rng);
    const auto res = min_norm_filter({{a, b}}, ud);
    const double lam = std::max(0.0, (b - a.dot(ud)) / a.squaredNorm());
    const Input expect = ud + lam * a.transpose();
    EXPECT_LT((res.input - expect).norm(), 1e-10);
    EXPECT_GE(a.dot(res.input) - b, -1e-8);
  }
}

TEST(CbfQp, TwoConstraintsMatchBruteForce) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  int checked = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<AffineConstraint> cons{{RowVector::Constant(1, U(rng)), U(rng)},
                                       {RowVector::Constant(1, U(rng)), U(rng)}};
    const double ud = U(rng);
    const auto res = min_norm_filter(cons, Input::Constant(1, ud));
    const auto bf = brute_force_1d([&](double u) { return 0.5 * (u - ud) * (u - ud); },
                                   [&](double u) {
                                     return std::min(cons[0].a[0] * u - cons[0].b, cons[1].a[0] * u - cons[1].b);
                                   },
                                   -50.0, 50.0, 1e-3);
    if (!bf.feasible) {
      // Either truly infeasible or the feasible interval is narrower than the grid.
      if (res.feasible()) {
        EXPECT_GE(detail::min_residual(cons, res.input), -1e-12);
      }
      continue;
    }
    ASSERT_TRUE(res.feasible()) << "instance " << k;
    EXPECT_NEAR(0.5 * (res.input[0] - ud) * (res.input[0] - ud), bf.value, 1e-3 * (1.0 + bf.value));
    EXPECT_LE(0.5 * (res.input[0] - ud) * (res.input[0] - ud), bf.value + 1e-9);
    ++checked;
  }
  EXPECT_GT(checked, 500);
}

TEST(CbfQp, InfeasibleIsAStatusWithLeastViolatingInput) {
  // u >= 1 and -u >= 0 cannot both hold; best compromise is u = 0.5.
  const std::vector<AffineConstraint> cons{{RowVector::Constant(1, 1.0), 1.0},
                                           {RowVector::Constant(1, -1.0), 0.0}};
  const auto res = min_norm_filter(cons, Input::Constant(1, 3.0));
  EXPECT_EQ(res.status, FilterStatus::infeasible);
  EXPECT_NEAR(res.input[0], 0.5, 1e-12);
  EXPECT_NEAR(res.margin, -0.5, 1e-12);
}

TEST(CbfQp, ZeroLghWithViolatedDriftIsInfeasible) {
  const auto sys = linear_system(Matrix::Identity(2, 2), Matrix::Zero(2, 1));
  RowVector c(2);
  c << 1.0, 0.0;
  // h = x0 at x = (-1, 0): Lgh = 0 and Lfh + alpha(h) = -2.
  State x(2);
  x << -1.0, 0.0;
  const auto res = cbf_qp_filter(linear_barrier(c, 0.0), sys, x, Input::Zero(1));
  EXPECT_EQ(res.status, FilterStatus::infeasible);
}

TEST(CbfQp, OutputSatisfiesEveryConstraint) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(0.0, 0.3), thd(-0.4, 0.4), ud(-40.0, 40.0);
  for (int k = 0; k < 500; ++k) {
    const State x = segway_state(th(rng), thd(rng));
    const auto res = cbf_qp_filter({h1, h2}, sys, x, Input::Constant(1, ud(rng)));
    if (!res.feasible()) continue;
    for (const auto* bf : {&h1, &h2}) {
      const auto lie = lie_derivatives(*bf, sys, x);
      EXPECT_GE(lie.Lfh + lie.Lgh.dot(res.input) + bf->alpha_of_h(x), -1e-8);
    }
  }
}
