#include "mrcbf/brute_force.hpp"
#include "mrcbf/robust_filter.hpp"

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

LipschitzBundle unit_bundle() {
  LipschitzBundle l;
  l.L_Lfh = 1.0;
  l.L_Lgh = 1.0;
  l.L_alpha_h = 1.0;
  return l;
}

// Random scalar MR constraint pair with a bounded solution.
struct ScalarInstance {
  std::vector<MrConstraint> cons;
  double u_des = 0.0;
};

ScalarInstance random_instance(std::mt19937_64& rng, int num_constraints) {
  std::uniform_real_distribution<double> lg(-3.0, 3.0), off(-2.0, 2.0), gain(0.0, 1.5), ud(-5.0, 5.0);
  ScalarInstance inst;
  for (int i = 0; i < num_constraints; ++i) {
    inst.cons.push_back({RowVector::Constant(1, lg(rng)), off(rng), gain(rng)});
  }
  inst.u_des = ud(rng);
  return inst;
}

double exact_residual(const std::vector<MrConstraint>& cons, double u) {
  double r = kInf;
  for (const auto& c : cons) r = std::min(r, c.Lgh[0] * u + c.offset - c.norm_gain * std::abs(u));
  return r;
}

}  // namespace

TEST(MrcbfMargin, WorkedExamples) {
  const RowVector lgh = RowVector::Constant(1, 2.0);
  EXPECT_NEAR(mrcbf_margin(1.0, lgh, 0.5, {0.3, 0.1}, Input::Constant(1, 1.0)), 3.1, 1e-15);
  EXPECT_NEAR(mrcbf_margin(1.0, lgh, 0.5, {0.3, 0.1}, Input::Zero(1)), 1.0 + 0.5 - 0.3, 1e-15);
  // a = b = 0 is the plain CBF condition.
  EXPECT_NEAR(mrcbf_margin(1.0, lgh, 0.5, {0.0, 0.0}, Input::Constant(1, -2.0)), 1.0 - 4.0 + 0.5, 1e-15);
}

TEST(MRParameters, CanonicalInstance) {
  LipschitzBundle l;
  l.L_Lfh = 2.0;
  l.L_Lgh = 3.0;
  l.L_alpha_h = 0.5;
  const auto p = MRParameters::canonical([](const Measurement& y) { return y[0]; }, l);
  const auto v = p(Measurement::Constant(1, 0.2));
  EXPECT_NEAR(v.a, 0.5, 1e-15);
  EXPECT_NEAR(v.b, 0.6, 1e-15);
  EXPECT_THROW(p(Measurement::Constant(1, -0.2)), std::domain_error);
}

TEST(BuildMrop, MatchesHandWrittenStandardForm) {
  // m = 1, eps = 0.2, unit bundle, Lfh = 0.5, Lgh = 2, alpha(h) = 0.3, u_des = 1.5.
  const MrConstraint c{RowVector::Constant(1, 2.0), 0.3 + 0.5 - (1.0 + 1.0) * 0.2, 1.0 * 0.2};
  const auto mrop = build_mrop({c}, Input::Constant(1, 1.5));
  const double r = 1.0 / std::sqrt(2.0);
  Matrix G(5, 3);
  G << -r, 0.0, 0.0,
       -r, 0.0, 0.0,
       0.0, 0.0, -1.0,
       0.0, 0.0, -2.0,
       0.0, 0.0, -0.2;
  Vector h(5);
  h << r, -r, 0.0, 0.4, 0.0;
  Vector cost(3);
  cost << 1.0, 0.0, -1.5;
  const auto& p = mrop.program;
  EXPECT_EQ(p.cone_dims, (std::vector<int>{3, 2}));
  EXPECT_EQ(p.cost, cost);
  EXPECT_LT((p.constraint_matrix - G).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((p.offset - h).cwiseAbs().maxCoeff(), 1e-15);
  ASSERT_EQ(p.num_equalities(), 1);
  EXPECT_EQ(p.eq_matrix(0, MropLayout::one), 1.0);
  EXPECT_EQ(p.eq_offset[0], 1.0);
}

TEST(BuildMrop, FromBarrierUsesLieDerivatives) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  const State x = segway_state(0.2, 0.1);
  const auto lie = lie_derivatives(h1, sys, x);
  const auto mrop = build_mrop(h1, sys, x, 0.2, unit_bundle(), Input::Zero(1));
  EXPECT_NEAR(mrop.program.offset[3], h1.alpha_of_h(x) + lie.Lfh - 0.4, 1e-12);
  EXPECT_NEAR(mrop.program.constraint_matrix(3, 2), -lie.Lgh[0], 1e-15);
  EXPECT_NEAR(mrop.program.constraint_matrix(4, 2), -0.2, 1e-15);
}

TEST(BuildMrop, RelaxedEpigraphEncodesPenalty) {
  const MrConstraint c{RowVector::Constant(1, 1.0), -1.0, 0.5};
  const RelaxationConfig relax{10.0, true};
  const auto mrop = build_mrop({c}, Input::Constant(1, 0.3), relax);
  EXPECT_EQ(mrop.program.cone_dims, (std::vector<int>{3, 2}));
  // t = sqrt(2 (1/2 (u - u_des)^2 + p delta^2)) sits on the epigraph boundary.
  Vector z(4);
  const double u = 1.7, delta = 0.2;
  z << std::sqrt((u - 0.3) * (u - 0.3) + 20.0 * delta * delta), 1.0, u, delta;
  const Vector s = mrop.program.slack(z);
  EXPECT_NEAR(s[0], s.segment(1, 2).norm(), 1e-12);
  // Constraint block carries delta.
  EXPECT_NEAR(s[3], u - 1.0 + delta, 1e-12);
  EXPECT_NEAR(s[4], 0.5 * u, 1e-12);
}

TEST(BuildMrop, RejectsBadInput) {
  const MrConstraint c{RowVector::Constant(2, 1.0), 0.0, 0.1};
  EXPECT_THROW(build_mrop({c}, Input::Zero(1)), std::invalid_argument);
  EXPECT_THROW(build_mrop(std::vector<MrConstraint>{}, Input::Zero(1)), std::invalid_argument);
}

TEST(MropFilter, InactiveConstraintReturnsDesiredInput) {
  const MrConstraint c{RowVector::Constant(1, 1.0), 5.0, 0.01};
  const auto res = mrop_filter({c}, Input::Constant(1, 0.7));
  EXPECT_TRUE(res.feasible());
  EXPECT_NEAR(res.input[0], 0.7, 1e-12);
  EXPECT_EQ(res.slack, 0.0);
}

TEST(MropFilter, ZeroEpsilonMatchesCbfQp) {
  const auto sys = segway_system({});
  SegwayBarrierConfig cfg;
  cfg.c = 0.3;
  const auto [h1, h2] = segway_barriers(cfg);
  const std::vector<RobustBarrier> rb{{h1, unit_bundle()}, {h2, unit_bundle()}};
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> th(cfg.theta_star - 0.3, cfg.theta_star + 0.3), thd(-0.6, 0.6),
      ud(-30.0, 30.0);
  int tested = 0;
  while (tested < 300) {
    const State x = segway_state(th(rng), thd(rng));
    if (boolean_composition({h1.value(x), h2.value(x)}) < 0.0) continue;
    const Input u_des = Input::Constant(1, ud(rng));
    const auto qp = cbf_qp_filter({h1, h2}, sys, x, u_des);
    const auto mr = mrop_filter(rb, sys, x, 0.0, u_des);
    ASSERT_EQ(qp.feasible(), mr.feasible());
    EXPECT_NEAR(mr.input[0], qp.input[0], 1e-6);
    ++tested;
  }
}

TEST(MropFilter, MatchesBruteForceOnRandomScalarInstances) {
  std::mt19937_64 rng(22);
  int compared = 0;
  int infeasible = 0;
  for (int k = 0; k < 300; ++k) {
    const auto inst = random_instance(rng, 1 + k % 2);
    const auto res = mrop_filter(inst.cons, Input::Constant(1, inst.u_des));
    const auto bf = brute_force_1d([&](double u) { return 0.5 * (u - inst.u_des) * (u - inst.u_des); },
                                   [&](double u) { return exact_residual(inst.cons, u); }, -50.0, 50.0,
                                   1e-4);
    if (!bf.feasible) {
      if (res.feasible()) {
        // Feasible region narrower than the grid or outside the scanned range.
        EXPECT_GE(exact_residual(inst.cons, res.input[0]), -1e-10);
      } else {
        ++infeasible;
      }
      continue;
    }
    ASSERT_TRUE(res.feasible()) << "instance " << k;
    const double cost = 0.5 * (res.input[0] - inst.u_des) * (res.input[0] - inst.u_des);
    EXPECT_NEAR(cost, bf.value, 1e-3) << "instance " << k;
    EXPECT_LE(cost, bf.value + 1e-6);
    EXPECT_GE(exact_residual(inst.cons, res.input[0]), -1e-10);
    ++compared;
  }
  EXPECT_GT(compared, 100);
  EXPECT_GT(infeasible, 0);
}

TEST(MropFilter, InfeasibleReportsLeastViolatingInput) {
  // u - 1 - 2 |u| <= -1 for every u.
  const MrConstraint c{RowVector::Constant(1, 1.0), -1.0, 2.0};
  const auto res = mrop_filter({c}, Input::Constant(1, 3.0));
  EXPECT_EQ(res.status, FilterStatus::infeasible);
  EXPECT_EQ(res.slack, 0.0);
  // The best achievable residual is -1 at u = 0.
  EXPECT_NEAR(res.input[0], 0.0, 1e-3);
  EXPECT_NEAR(res.margin, -1.0, 1e-3);
}

TEST(MropFilter, RelaxedOnlyEngagesWhenNeeded) {
  std::mt19937_64 rng(23);
  int feasible = 0, infeasible = 0;
  const RelaxationConfig relax{1e3, true};
  for (int k = 0; k < 200; ++k) {
    const auto inst = random_instance(rng, 2);
    const Input ud = Input::Constant(1, inst.u_des);
    const auto plain = mrop_filter(inst.cons, ud);
    const auto relaxed = mrop_filter(inst.cons, ud, relax);
    ASSERT_TRUE(relaxed.feasible());
    if (plain.feasible()) {
      EXPECT_LE(relaxed.slack, 1e-6);
      EXPECT_NEAR(relaxed.input[0], plain.input[0], 1e-4);
      ++feasible;
    } else {
      EXPECT_GT(relaxed.slack, 0.0);
      EXPECT_GE(exact_residual(inst.cons, relaxed.input[0]) + relaxed.slack, -1e-7);
      ++infeasible;
    }
  }
  EXPECT_GT(feasible, 0);
  EXPECT_GT(infeasible, 0);
}

TEST(MropFilter, RelaxedProgramMatchesPenalizedBruteForce) {
  std::mt19937_64 rng(24);
  const double p = 50.0;
  for (int k = 0; k < 50; ++k) {
    const auto inst = random_instance(rng, 2);
    const auto mrop = build_mrop(inst.cons, Input::Constant(1, inst.u_des), {p, true});
    const auto rep = solve(mrop.program);
    ASSERT_EQ(rep.status, SolveStatus::optimal);
    // For fixed u the best slack is max(0, -residual(u)).
    auto penalized = [&](double u) {
      const double d = std::max(0.0, -exact_residual(inst.cons, u));
      return 0.5 * (u - inst.u_des) * (u - inst.u_des) + p * d * d;
    };
    const auto coarse = brute_force_1d(penalized, [](double) { return 0.0; }, -20.0, 20.0, 1e-3);
    const double c = coarse.argmin;
    const auto bf = brute_force_1d(penalized, [](double) { return 0.0; }, c - 2e-3, c + 2e-3, 1e-8);
    const double u = mrop.decode_input(rep.solution)[0];
    EXPECT_LE(penalized(u), bf.value + 1e-7 * (1.0 + bf.value));
    EXPECT_NEAR(penalized(u), bf.value, 1e-6 * (1.0 + bf.value));
    EXPECT_NEAR(rep.primal_objective, std::sqrt(2.0 * penalized(u)), 1e-6);
  }
}

TEST(MropFilter, InfeasibilityIsMonotoneInEpsilon) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  LipschitzBundle l;
  l.L_Lfh = 40.0;
  l.L_Lgh = 1.0;
  l.L_alpha_h = 2.5;
  const std::vector<RobustBarrier> rb{{h1, l}, {h2, l}};
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> th(0.0, 0.3), thd(-0.3, 0.3);
  int transitions = 0;
  for (int k = 0; k < 40; ++k) {
    const State x = segway_state(th(rng), thd(rng));
    bool was_infeasible = false;
    for (double eps = 0.0; eps <= 0.1; eps += 0.01) {
      const bool feasible = mrop_filter(rb, sys, x, eps, Input::Constant(1, 5.0)).feasible();
      if (was_infeasible) {
        EXPECT_FALSE(feasible) << "state " << k << " eps " << eps;
      }
      if (!feasible && !was_infeasible) ++transitions;
      was_infeasible = was_infeasible || !feasible;
    }
  }
  EXPECT_GT(transitions, 0);
}

TEST(MropFilter, EmpiricalContinuityConstantIsFinite) {
  const auto sys = segway_system({});
  SegwayBarrierConfig cfg;
  cfg.c = 0.3;
  const auto [h1, h2] = segway_barriers(cfg);
  LipschitzBundle l;
  l.L_Lfh = 5.0;
  l.L_Lgh = 0.1;
  l.L_alpha_h = 1.0;
  const std::vector<RobustBarrier> rb{{h1, l}, {h2, l}};
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> th(cfg.theta_star - 0.25, cfg.theta_star + 0.25), thd(-0.3, 0.3),
      pert(-1e-4, 1e-4);
  double K = 0.0;
  for (int k = 0; k < 300; ++k) {
    const State x = segway_state(th(rng), thd(rng));
    State x2 = x;
    x2[segway_index::theta] += pert(rng);
    x2[segway_index::theta_dot] += pert(rng);
    const double eps = 0.02, eps2 = eps + pert(rng) * 0.5 + 5e-5;
    const Input ud = Input::Constant(1, 20.0);
    const auto a = mrop_filter(rb, sys, x, eps, ud);
    const auto b = mrop_filter(rb, sys, x2, eps2, ud);
    if (!a.feasible() || !b.feasible()) continue;
    const double dz = std::hypot((x2 - x).norm(), eps2 - eps);
    K = std::max(K, (a.input - b.input).norm() / dz);
  }
  EXPECT_TRUE(std::isfinite(K));
  EXPECT_LT(K, 1e6);
}

TEST(EpsBar, WorkedExamples) {
  // ||Lgh|| = 0, Lfh + alpha(h) = 1, Lipschitz sums 1 -> max{0, 0.5}.
  const auto sys = linear_system(Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  BarrierFunction bf;
  bf.h = [](const State& x) { return x[0]; };
  bf.grad_h = [](const State&) { return RowVector::Constant(1, 1.0); };
  LipschitzBundle l;
  l.L_Lfh = 0.5;
  l.L_alpha_h = 0.5;
  l.L_Lgh = 1.0;
  EXPECT_NEAR(eps_bar(bf, sys, State::Constant(1, 1.0), l), 0.5, 1e-15);
  EXPECT_NEAR(eps_bar_measurement_side(bf, sys, State::Constant(1, 1.0), l), 1.0, 1e-15);
  // Lgh = 0, Lfh + alpha(h) <= 0: nothing admissible.
  EXPECT_LE(eps_bar(bf, sys, State::Constant(1, -0.5), l), 0.0);
  EXPECT_EQ(eps_bar(bf, sys, State::Constant(1, 0.0), l), 0.0);
}

TEST(EpsBar, BoundaryStateUsesInputBranch) {
  // h = 0 and Lfh = 0 with Lgh != 0.
  const auto sys = linear_system(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 3.0));
  BarrierFunction bf;
  bf.h = [](const State& x) { return x[0]; };
  bf.grad_h = [](const State&) { return RowVector::Constant(1, 1.0); };
  LipschitzBundle l;
  l.L_Lfh = 1.0;
  l.L_alpha_h = 1.0;
  l.L_Lgh = 2.0;
  EXPECT_NEAR(eps_bar(bf, sys, State::Zero(1), l), 3.0 / 4.0, 1e-15);
}

TEST(EpsBar, ZeroLipschitzConstants) {
  const auto sys = linear_system(Matrix::Zero(1, 1), Matrix::Constant(1, 1, 3.0));
  BarrierFunction bf;
  bf.h = [](const State& x) { return x[0]; };
  bf.grad_h = [](const State&) { return RowVector::Constant(1, 1.0); };
  LipschitzBundle zero;
  EXPECT_EQ(eps_bar(bf, sys, State::Constant(1, 1.0), zero), kInf);
  const auto flat = linear_system(Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  EXPECT_THROW(eps_bar(bf, flat, State::Constant(1, -1.0), zero), std::domain_error);
}

TEST(EpsBar, MeasurementSideIsTwiceStateSide) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  const LipschitzBundle l = unit_bundle();
  std::mt19937_64 rng(27);
  std::uniform_real_distribution<double> U(-0.5, 0.5);
  for (int k = 0; k < 100; ++k) {
    const State x = segway_state(U(rng), U(rng));
    EXPECT_NEAR(eps_bar_measurement_side(h1, sys, x, l), 2.0 * eps_bar(h1, sys, x, l), 1e-12);
  }
}

TEST(EpsBar, MeasurementSideBoundIsSound) {
  // Wherever eps < eps_bar_measurement_side(x_hat) the MR-CBF set is nonempty.
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  LipschitzBundle l;
  l.L_Lfh = 40.0;
  l.L_Lgh = 0.3;
  l.L_alpha_h = 2.4;
  std::mt19937_64 rng(28);
  std::uniform_real_distribution<double> th(-0.2, 0.5), thd(-1.0, 1.0), frac(0.0, 0.999);
  int checked = 0;
  for (int k = 0; k < 200; ++k) {
    const State x = segway_state(th(rng), thd(rng));
    const double bound = eps_bar_measurement_side(h1, sys, x, l);
    if (!(bound > 0.0)) continue;
    const double eps = frac(rng) * std::min(bound, 1.0);
    const auto c = mr_constraint(h1, sys, x, eps, l);
    const bool feasible = brute_force_feasible_1d(
        [&](double u) { return exact_residual({c}, u); }, -100.0, 100.0, 1e-3);
    const bool far = std::abs(c.Lgh[0]) > c.norm_gain;  // large |u| always works
    EXPECT_TRUE(feasible || far) << "state " << k;
    ++checked;
  }
  EXPECT_GT(checked, 50);
}

TEST(Lemma5, WorkedExample) {
  EXPECT_NEAR(lemma5_threshold({1.0, 1.0, 1.0, 1.0, 1.0}), 1.0, 1e-15);
  auto feasible = [](const FeasibilityParams& p, double eps) {
    return brute_force_feasible_1d([&](double u) { return p.residual(u, eps); }, -100.0, 100.0, 1e-4);
  };
  const FeasibilityParams p{1.0, 1.0, 1.0, 1.0, 1.0};
  EXPECT_TRUE(feasible(p, 0.999));
  EXPECT_FALSE(feasible(p, 1.001));
}

TEST(Lemma5, EqualOffsetsGiveZeroInputBranch) {
  for (double a : {-2.0, 0.5, 3.0}) {
    for (double b : {0.0, 1.0, 4.0}) {
      EXPECT_GE(lemma5_threshold({a, b, 0.7, 0.7, 2.0}), 0.35 - 1e-15);
    }
  }
  EXPECT_NEAR(lemma5_threshold({0.0, 1.0, 0.7, 0.7, 2.0}), 0.35, 1e-15);
}

TEST(Lemma5, BranchPairingFollowsTheDerivation) {
  // u < 0 is forced by the second constraint; the pair is feasible up to 0.5.
  const FeasibilityParams p{1.0, 1.0, 5.0, -1.0, 1.0};
  EXPECT_NEAR(lemma5_threshold(p), 0.5, 1e-12);
  auto feasible = [&](double eps) {
    return brute_force_feasible_1d([&](double u) { return p.residual(u, eps); }, -100.0, 100.0, 1e-4);
  };
  EXPECT_TRUE(feasible(0.49));
  EXPECT_FALSE(feasible(0.51));
}

TEST(Lemma5, DegenerateCases) {
  EXPECT_EQ(lemma5_threshold({0.0, 1.0, 1.0, 2.0, 0.0}), kInf);
  EXPECT_THROW(lemma5_threshold({0.0, 1.0, -1.0, 2.0, 0.0}), std::domain_error);
  EXPECT_THROW(lemma5_threshold({1.0, -1.0, 1.0, 1.0, 1.0}), std::invalid_argument);
  // Offsets summing below zero: infeasible even without error.
  EXPECT_LT(lemma5_threshold({1.0, 1.0, -1.0, 0.5, 1.0}), 0.0);
}

TEST(Lemma5, RandomTuplesAgreeWithBruteForce) {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> A(-5.0, 5.0), B(0.0, 5.0), D(-2.0, 5.0), L(0.1, 5.0);
  int agree = 0, total = 0;
  for (int k = 0; k < 100; ++k) {
    const FeasibilityParams p{A(rng), B(rng), D(rng), D(rng), L(rng)};
    const double t = lemma5_threshold(p);
    auto feasible = [&](double eps) {
      return brute_force_feasible_1d([&](double u) { return p.residual(u, eps); }, -100.0, 100.0, 1e-4);
    };
    ++total;
    if (t < 0.0) {
      agree += !feasible(0.0);
      continue;
    }
    agree += feasible(t * (1.0 - 1e-3)) && !feasible(t * (1.0 + 1e-3));
  }
  EXPECT_EQ(agree, total);
}

TEST(Prop1, EqualsHalfTheMappedLemma5Threshold) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  const LipschitzBundle l = unit_bundle();
  const State x = segway_state(0.15, 0.05);
  const auto p = prop1_params(h1, h2, sys, x, l);
  const auto lie = lie_derivatives(h1, sys, x);
  EXPECT_NEAR(p.a, lie.Lgh[0], 1e-15);
  EXPECT_NEAR(p.b, 1.0, 1e-15);
  EXPECT_NEAR(p.d1, h1.alpha_of_h(x) + lie.Lfh, 1e-15);
  EXPECT_NEAR(p.d2, h2.alpha_of_h(x) - lie.Lfh, 1e-15);
  EXPECT_NEAR(p.L, 2.0, 1e-15);
  EXPECT_EQ(prop1_eps_bar(h1, h2, sys, x, l), 0.5 * lemma5_threshold(p));
}

TEST(Prop1, SymmetricStateReducesToZeroInputBranch) {
  const auto sys = segway_system({});
  const SegwayBarrierConfig cfg;
  const auto [h1, h2] = segway_barriers(cfg);
  const LipschitzBundle l = unit_bundle();
  const State x = segway_state(cfg.theta_star, 0.0);
  const double d = h1.alpha_of_h(x);
  EXPECT_GE(prop1_eps_bar(h1, h2, sys, x, l), 0.5 * d / l.drift_sum() - 1e-15);
}

TEST(Prop1, RequiresOppositeGradients) {
  const auto sys = segway_system({});
  const auto [h1, h2] = segway_barriers({});
  EXPECT_THROW(prop1_eps_bar(h1, h1, sys, segway_state(0.1, 0.0), unit_bundle()), std::invalid_argument);
}

TEST(BuildMrop, NormFormHasTheSameMinimizer) {
  std::mt19937_64 rng(31);
  const ConeSolver solver;
  int compared = 0;
  for (int k = 0; k < 60; ++k) {
    const auto inst = random_instance(rng, 1 + k % 2);
    const Input ud = Input::Constant(1, inst.u_des);
    const auto rot = build_mrop(inst.cons, ud);
    const auto nrm = build_mrop(inst.cons, ud, {}, MropForm::norm);
    EXPECT_EQ(nrm.layout.form, MropForm::norm);
    EXPECT_EQ(nrm.program.cone_dims.front(), 2);
    const auto a = solver.solve(rot.program);
    const auto b = solver.solve(nrm.program);
    if (a.status != SolveStatus::optimal) continue;
    ASSERT_EQ(b.status, SolveStatus::optimal) << "instance " << k;
    EXPECT_NEAR(rot.decode_input(a.solution)[0], nrm.decode_input(b.solution)[0], 1e-5) << "instance " << k;
    EXPECT_NEAR(b.primal_objective, std::abs(nrm.decode_input(b.solution)[0] - inst.u_des), 1e-6);
    ++compared;
  }
  EXPECT_GT(compared, 20);
}

TEST(MropFilter, AccurateForLargeDesiredInputs) {
  // Two opposite half-lines; u_des = -55.7 is clipped at -53.3059... exactly.
  const MrConstraint lo{RowVector::Constant(1, 1.12412395), 59.92248908, 0.0};
  const MrConstraint hi{RowVector::Constant(1, -1.12412395), 60.07751092, 0.0};
  const auto res = mrop_filter({lo, hi}, Input::Constant(1, -55.67973653));
  ASSERT_TRUE(res.feasible());
  EXPECT_NEAR(res.input[0], -59.92248908 / 1.12412395, 1e-8);
}

TEST(BruteForceMax, ConcaveKinkResolvedBelowTheCoarseStep) {
  const double peak = 0.123456789;
  const auto r = brute_force_max_1d([&](double u) { return -std::abs(u - peak); }, -10.0, 10.0, 0.05, 1e-12);
  EXPECT_NEAR(r.argmax, peak, 1e-11);
  EXPECT_NEAR(r.value, 0.0, 1e-11);
}
