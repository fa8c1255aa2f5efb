#pragma once

#include "mrcbf/barrier.hpp"
#include "mrcbf/cone_program.hpp"
#include "mrcbf/cone_solver.hpp"
#include "mrcbf/dynamics.hpp"
#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrcbf {

/// Evaluated margin coefficients (a, b) of the MR-CBF condition.
struct MRValues {
  double a = 0.0;
  double b = 0.0;
};

/// Parameter function y -> (a(y), b(y)), both nonnegative.
struct MRParameters {
  std::function<double(const Measurement&)> a;
  std::function<double(const Measurement&)> b;

  MRValues operator()(const Measurement& y) const {
    const MRValues v{a(y), b(y)};
    if (!(v.a >= 0.0) || !(v.b >= 0.0)) {
      throw std::domain_error("MRParameters: a(y) and b(y) must be nonnegative");
    }
    return v;
  }

  /// (eps(y) (L_Lfh + L_alpha_h), eps(y) L_Lgh).
  static MRParameters canonical(std::function<double(const Measurement&)> eps,
                                const LipschitzBundle& lips) {
    const double drift = lips.drift_sum();
    const double gain = lips.L_Lgh;
    return {[eps, drift](const Measurement& y) { return eps(y) * drift; },
            [eps, gain](const Measurement& y) { return eps(y) * gain; }};
  }
};

inline MRValues mr_values(double eps, const LipschitzBundle& lips) {
  require(eps >= 0.0, "mr_values: eps must be nonnegative");
  return {eps * lips.drift_sum(), eps * lips.L_Lgh};
}

/// Lfh + Lgh u - a - b ||u|| + alpha(h); the input is admissible iff this is >= 0.
inline double mrcbf_margin(double Lfh, const RowVector& Lgh, double alpha_h, const MRValues& ab,
                           const Input& u) {
  require_dim(u.size(), Lgh.size(), "mrcbf_margin");
  return Lfh + Lgh.dot(u) - ab.a - ab.b * u.norm() + alpha_h;
}

inline double mrcbf_margin(const BarrierFunction& bf, const ControlAffineSystem& sys,
                           const State& x_hat, const MRValues& ab, const Input& u) {
  const auto lie = lie_derivatives(bf, sys, x_hat);
  return mrcbf_margin(lie.Lfh, lie.Lgh, bf.alpha_of_h(x_hat), ab, u);
}

/// One evaluated MR-CBF constraint: Lgh u + offset >= norm_gain ||u||.
struct MrConstraint {
  RowVector Lgh;
  double offset = 0.0;
  double norm_gain = 0.0;

  double residual(const Input& u) const { return Lgh.dot(u) + offset - norm_gain * u.norm(); }
};

inline MrConstraint mr_constraint(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                  const State& x_hat, double eps, const LipschitzBundle& lips) {
  require(eps >= 0.0, "mr_constraint: eps must be nonnegative");
  lips.validate();
  const auto lie = lie_derivatives(bf, sys, x_hat);
  MrConstraint c{lie.Lgh, bf.alpha_of_h(x_hat) + lie.Lfh - lips.drift_sum() * eps,
                 lips.L_Lgh * eps};
  if (!c.Lgh.allFinite() || !std::isfinite(c.offset) || !std::isfinite(c.norm_gain)) {
    throw std::runtime_error("mr_constraint: non-finite constraint data");
  }
  return c;
}

/// A barrier together with the Lipschitz bundle used to robustify it.
struct RobustBarrier {
  BarrierFunction barrier;
  LipschitzBundle lips;
};

inline std::vector<MrConstraint> mr_constraints(const std::vector<RobustBarrier>& barriers,
                                                const ControlAffineSystem& sys, const State& x_hat,
                                                double eps) {
  std::vector<MrConstraint> out;
  out.reserve(barriers.size());
  for (const auto& rb : barriers) out.push_back(mr_constraint(rb.barrier, sys, x_hat, eps, rb.lips));
  return out;
}

inline double min_residual(const std::vector<MrConstraint>& cons, const Input& u) {
  double r = kInf;
  for (const auto& c : cons) r = std::min(r, c.residual(u));
  return r;
}

struct RelaxationConfig {
  double penalty = 1e3;
  bool enabled = false;

  void validate() const { require(penalty > 0.0 && std::isfinite(penalty), "RelaxationConfig: penalty must be positive"); }
};

/// Epigraph of the unrelaxed objective: the rotated cone t >= 1/2 ||u||^2 with
/// cost t - u_des'u, or the plain cone t >= ||u - u_des|| with cost t.
enum class MropForm { rotated, norm };

/// Variable layout of the standard-form program: z = (t, one, u[, delta]).
struct MropLayout {
  int m = 0;
  int num_barriers = 0;
  bool relaxed = false;
  MropForm form = MropForm::rotated;

  static constexpr Eigen::Index t = 0;
  static constexpr Eigen::Index one = 1;
  static constexpr Eigen::Index u = 2;
  Eigen::Index delta() const { return 2 + m; }
  Eigen::Index num_variables() const { return 2 + m + (relaxed ? 1 : 0); }
};

struct Mrop {
  ConeProgram program;
  MropLayout layout;

  Input decode_input(const Vector& z) const { return z.segment(MropLayout::u, layout.m); }
  double decode_slack(const Vector& z) const { return layout.relaxed ? z[layout.delta()] : 0.0; }
};

/// Standard-form SOCP of the MR-OP filter.
///
/// Unrelaxed: minimize t - u_des'u with R (t, 1, u) in Q^{m+2} and, per
/// constraint, (Lgh u + offset, norm_gain u) in Q^{m+1}; the "one" variable is
/// pinned by an equality row.
///
/// Relaxed: minimize t with (t, u - u_des, sqrt(2p) delta) in Q^{m+2}, so t is
/// the square root of 2 (1/2 ||u - u_des||^2 + p delta^2) and the minimizer is
/// the same; delta is added to every constraint's scalar row. The plain norm
/// keeps t on the scale of the residual rather than its square, which matters
/// once p delta^2 is large. `form = norm` uses the same epigraph for the
/// unrelaxed program; the minimizer is unchanged.
inline Mrop build_mrop(const std::vector<MrConstraint>& cons, const Input& u_des,
                       const RelaxationConfig& relax = {}, MropForm form = MropForm::rotated) {
  require(!cons.empty(), "build_mrop: no constraints");
  const int m = static_cast<int>(u_des.size());
  require(m >= 1, "build_mrop: empty input");
  for (const auto& c : cons) {
    require_dim(c.Lgh.size(), m, "build_mrop: Lgh");
    require(c.norm_gain >= 0.0, "build_mrop: negative norm gain");
  }
  if (relax.enabled) relax.validate();

  Mrop out;
  const bool rotated = !relax.enabled && form == MropForm::rotated;
  out.layout = {m, static_cast<int>(cons.size()), relax.enabled, rotated ? MropForm::rotated : MropForm::norm};
  const Eigen::Index nv = out.layout.num_variables();
  const Eigen::Index epi = relax.enabled || rotated ? m + 2 : m + 1;
  const Eigen::Index rows = epi + static_cast<Eigen::Index>(cons.size()) * (m + 1);

  ConeProgram& prog = out.program;
  prog.cost = Vector::Zero(nv);
  prog.cost[MropLayout::t] = 1.0;
  prog.constraint_matrix = Matrix::Zero(rows, nv);
  prog.offset = Vector::Zero(rows);
  prog.cone_dims.push_back(static_cast<int>(epi));

  if (rotated) {
    prog.cost.segment(MropLayout::u, m) = -u_des;
    const Matrix R = rotated_cone_embed(m);
    prog.constraint_matrix.block(0, 0, epi, nv) = -R;
    prog.constraint_matrix.col(MropLayout::one).head(epi).setZero();
    prog.offset.head(epi) = R.col(1);
  } else {
    prog.constraint_matrix(0, MropLayout::t) = -1.0;
    prog.constraint_matrix.block(1, MropLayout::u, m, m) = -Matrix::Identity(m, m);
    prog.offset.segment(1, m) = -u_des;
    if (relax.enabled) prog.constraint_matrix(m + 1, out.layout.delta()) = -std::sqrt(2.0 * relax.penalty);
  }

  Eigen::Index row = epi;
  for (const auto& c : cons) {
    prog.cone_dims.push_back(m + 1);
    prog.constraint_matrix.block(row, MropLayout::u, 1, m) = -c.Lgh;
    if (relax.enabled) prog.constraint_matrix(row, out.layout.delta()) = -1.0;
    prog.offset[row] = c.offset;
    prog.constraint_matrix.block(row + 1, MropLayout::u, m, m) =
        -c.norm_gain * Matrix::Identity(m, m);
    row += m + 1;
  }

  prog.eq_matrix = Matrix::Zero(1, nv);
  prog.eq_matrix(0, MropLayout::one) = 1.0;
  prog.eq_offset = Vector::Ones(1);
  prog.validate();
  return out;
}

inline Mrop build_mrop(const BarrierFunction& bf, const ControlAffineSystem& sys, const State& x_hat,
                       double eps, const LipschitzBundle& lips, const Input& u_des,
                       const RelaxationConfig& relax = {}) {
  require_dim(u_des.size(), sys.m, "build_mrop: u_des");
  return build_mrop({mr_constraint(bf, sys, x_hat, eps, lips)}, u_des, relax);
}

inline Mrop build_mrop(const std::vector<RobustBarrier>& barriers, const ControlAffineSystem& sys,
                       const State& x_hat, double eps, const Input& u_des,
                       const RelaxationConfig& relax = {}) {
  require_dim(u_des.size(), sys.m, "build_mrop: u_des");
  return build_mrop(mr_constraints(barriers, sys, x_hat, eps), u_des, relax);
}

namespace detail {

inline FilterStatus filter_status(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return FilterStatus::optimal;
    case SolveStatus::infeasible: return FilterStatus::infeasible;
    case SolveStatus::max_iters: return FilterStatus::max_iters;
    case SolveStatus::unbounded:
    case SolveStatus::numerical_failure: return FilterStatus::numerical_failure;
  }
  return FilterStatus::numerical_failure;
}

// Pushes a solver output that misses the constraints by round-off back into the
// feasible set with the smallest linearized correction.
inline Input polish(const std::vector<MrConstraint>& cons, Input u) {
  for (int pass = 0; pass < 8; ++pass) {
    const double target = 1e-13 * (1.0 + u.norm());
    std::vector<AffineConstraint> lin;
    for (const auto& c : cons) {
      const double r = c.residual(u);
      if (r >= target) continue;
      const double nu = u.norm();
      RowVector grad = c.Lgh;
      if (nu > 0.0) grad -= c.norm_gain * u.transpose() / nu;
      lin.push_back({grad, 2.0 * target - r});
    }
    if (lin.empty()) return u;
    const auto step = min_norm_filter(lin, Input::Zero(u.size()));
    if (!step.feasible()) return u;
    u += step.input;
  }
  return u;
}

}  // namespace detail

/// MR-OP (or R-MR-OP) safety filter over one or more evaluated constraints.
///
/// With relaxation enabled the unrelaxed program is tried first and the slack
/// only engages when it is infeasible. Without relaxation an infeasible
/// instance returns status `infeasible` and the least-violating input.
inline FilterResult mrop_filter(const std::vector<MrConstraint>& cons, const Input& u_des,
                                const RelaxationConfig& relax = {},
                                const SolverTolerances& tol = {}) {
  require(!cons.empty(), "mrop_filter: no constraints");
  for (const auto& c : cons) require_dim(c.Lgh.size(), u_des.size(), "mrop_filter");
  require(u_des.allFinite(), "mrop_filter: non-finite desired input");

  FilterResult out;
  const double at_des = min_residual(cons, u_des);
  if (at_des >= 0.0) {
    out.input = u_des;
    out.margin = at_des;
    out.status = FilterStatus::optimal;
    return out;
  }

  const ConeSolver solver(tol);
  const Mrop plain = build_mrop(cons, u_des, {relax.penalty, false}, MropForm::norm);
  const SolveReport rep = solver.solve(plain.program);
  out.iterations = rep.iterations;
  if (rep.status == SolveStatus::optimal) {
    const Input u = plain.decode_input(rep.solution);
    const double r = min_residual(cons, u);
    out.input = r < 0.0 && r > -1e-6 * (1.0 + u.norm()) ? detail::polish(cons, u) : u;
    out.margin = min_residual(cons, out.input);
    out.status = FilterStatus::optimal;
    return out;
  }

  // Unrelaxed program has no usable solution: solve the slack version, either
  // as the requested relaxation or with a stiff penalty as a diagnostic.
  const RelaxationConfig fallback{relax.enabled ? relax.penalty : 1e6, true};
  const Mrop relaxed = build_mrop(cons, u_des, fallback);
  const SolveReport rrep = solver.solve(relaxed.program);
  out.iterations += rrep.iterations;
  out.input = rrep.status == SolveStatus::optimal ? relaxed.decode_input(rrep.solution) : u_des;
  out.slack = rrep.status == SolveStatus::optimal ? relaxed.decode_slack(rrep.solution) : 0.0;
  out.margin = min_residual(cons, out.input);
  if (relax.enabled) {
    out.status = detail::filter_status(rrep.status);
  } else {
    // A breakdown on the plain program is resolved by the diagnostic: a clearly
    // positive least slack certifies infeasibility.
    const bool certified = rrep.status == SolveStatus::optimal && out.slack > 1e-6;
    out.status = rep.status == SolveStatus::unbounded || certified
                     ? FilterStatus::infeasible
                     : detail::filter_status(rep.status);
    out.slack = 0.0;
  }
  return out;
}

inline FilterResult mrop_filter(const std::vector<RobustBarrier>& barriers,
                                const ControlAffineSystem& sys, const State& x_hat, double eps,
                                const Input& u_des, const RelaxationConfig& relax = {},
                                const SolverTolerances& tol = {}) {
  require_dim(u_des.size(), sys.m, "mrop_filter: u_des");
  return mrop_filter(mr_constraints(barriers, sys, x_hat, eps), u_des, relax, tol);
}

/// Measurement-driven form: eps is evaluated from y.
inline FilterResult mrop_filter(const std::vector<RobustBarrier>& barriers,
                                const ControlAffineSystem& sys, const Measurement& y,
                                const State& x_hat,
                                const std::function<double(const Measurement&)>& eps_fn,
                                const Input& u_des, const RelaxationConfig& relax = {},
                                const SolverTolerances& tol = {}) {
  const double eps = eps_fn(y);
  if (!(eps >= 0.0)) throw std::domain_error("mrop_filter: eps(y) must be nonnegative");
  return mrop_filter(barriers, sys, x_hat, eps, u_des, relax, tol);
}

namespace detail {

// num / den for den > 0; +inf when den == 0 < num; undefined otherwise.
inline std::optional<double> bound_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  if (num > 0.0) return kInf;
  return std::nullopt;
}

inline double admissible_error(const BarrierFunction& bf, const ControlAffineSystem& sys,
                               const State& x, const LipschitzBundle& lips, double factor) {
  lips.validate();
  const auto lie = lie_derivatives(bf, sys, x);
  const auto input_branch = bound_ratio(lie.Lgh.norm(), factor * lips.L_Lgh);
  const auto drift_branch = bound_ratio(lie.Lfh + bf.alpha_of_h(x), factor * lips.drift_sum());
  if (!input_branch && !drift_branch) {
    throw std::domain_error("eps_bar: both branches undefined (zero Lipschitz constants)");
  }
  return std::max(input_branch.value_or(-kInf), drift_branch.value_or(-kInf));
}

}  // namespace detail

/// Largest state-side error radius for which the MR-CBF condition stays
/// satisfiable at every estimate within that radius of x:
///   max{ ||Lgh|| / (2 L_Lgh), (Lfh + alpha(h)) / (2 (L_Lfh + L_alpha_h)) }.
/// Signed: a nonpositive value means no error is admissible at x.
inline double eps_bar(const BarrierFunction& bf, const ControlAffineSystem& sys, const State& x,
                      const LipschitzBundle& lips) {
  return detail::admissible_error(bf, sys, x, lips, 2.0);
}

/// Same bound evaluated at the estimate, without the factor 2.
inline double eps_bar_measurement_side(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                       const State& x_hat, const LipschitzBundle& lips) {
  return detail::admissible_error(bf, sys, x_hat, lips, 1.0);
}

/// Coefficients of the scalar pair
///   a u - b eps |u| >= -d1 + L eps,   -a u - b eps |u| >= -d2 + L eps.
struct FeasibilityParams {
  double a = 0.0;
  double b = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double L = 0.0;

  void validate() const {
    require(b >= 0.0 && std::isfinite(b), "FeasibilityParams: b must be nonnegative");
    require(L >= 0.0 && std::isfinite(L), "FeasibilityParams: L must be nonnegative");
    require(std::isfinite(a) && std::isfinite(d1) && std::isfinite(d2),
            "FeasibilityParams: non-finite coefficient");
  }

  /// Smallest residual of the pair at (u, eps).
  double residual(double u, double eps) const {
    const double first = a * u - b * eps * std::abs(u) + d1 - L * eps;
    const double second = -a * u - b * eps * std::abs(u) + d2 - L * eps;
    return std::min(first, second);
  }
};

namespace detail {

// Sup of {eps : eps <= num / den} with den >= 0 handled as a limit.
inline double upper_ratio(double num, double den) {
  if (den > 0.0) return num / den;
  return num >= 0.0 ? kInf : -kInf;
}

// Branch where u takes the sign of `sign_a * a`, the constraint with offset
// `d_bind` limits |u| and the other (offset `d_other`) is checked.
inline double signed_branch(const FeasibilityParams& p, double d_bind, double d_other) {
  const double abs_a = std::abs(p.a);
  if (abs_a == 0.0) return -kInf;
  // Valid while eps <= d_bind / L and |a| - b eps >= 0.
  double upper = upper_ratio(d_bind, p.L);
  if (p.b > 0.0) upper = std::min(upper, abs_a / p.b);
  const double num = abs_a * (d_bind + d_other);
  const double den = p.b * (d_bind - d_other) + 2.0 * p.L * abs_a;
  if (den > 0.0) return std::min(upper, num / den);
  // den <= 0: den eps <= num holds on [0, upper] when num >= 0; for num < 0
  // the pair is already infeasible at eps = 0.
  return num >= 0.0 ? upper : -kInf;
}

}  // namespace detail

/// Largest eps for which the scalar pair in FeasibilityParams is feasible:
///   max{ min{d1, d2} / L,
///        min{d2 / L, |a|(d1 + d2) / (b (d2 - d1) + 2 L |a|)},
///        min{d1 / L, |a|(d1 + d2) / (b (d1 - d2) + 2 L |a|)} }.
/// The second term takes u with the sign of a (second constraint binding), the
/// third the opposite sign. A negative value means infeasible already at eps = 0.
inline double lemma5_threshold(const FeasibilityParams& p) {
  p.validate();
  if (p.L == 0.0 && p.a == 0.0) {
    if (p.d1 >= 0.0 && p.d2 >= 0.0) return kInf;
    throw std::domain_error("lemma5_threshold: L = 0 and a = 0 with a negative offset");
  }
  const double at_zero = std::min(detail::upper_ratio(p.d1, p.L), detail::upper_ratio(p.d2, p.L));
  const double same_sign = detail::signed_branch(p, p.d2, p.d1);
  const double opposite_sign = detail::signed_branch(p, p.d1, p.d2);
  return std::max({at_zero, same_sign, opposite_sign});
}

/// Maps the barrier pair at x onto the scalar pair (with eps = 2 eps(x)).
/// The input enters as u 1_m, so b = L_Lgh ||1_m|| = L_Lgh sqrt(m).
inline FeasibilityParams prop1_params(const BarrierFunction& bf1, const BarrierFunction& bf2,
                                      const ControlAffineSystem& sys, const State& x,
                                      const LipschitzBundle& lips) {
  lips.validate();
  const auto lie1 = lie_derivatives(bf1, sys, x);
  const RowVector g1 = bf1.gradient(x);
  const RowVector g2 = bf2.gradient(x);
  require((g1 + g2).norm() <= 1e-9 * (1.0 + g1.norm()),
          "prop1_eps_bar: barriers must have opposite gradients");
  FeasibilityParams p;
  p.a = lie1.Lgh.sum();
  p.b = lips.L_Lgh * std::sqrt(static_cast<double>(sys.m));
  p.d1 = bf1.alpha_of_h(x) + lie1.Lfh;
  p.d2 = bf2.alpha_of_h(x) - lie1.Lfh;
  p.L = lips.drift_sum();
  return p;
}

/// Error radius eps(x) below which both MR-CBF constraints of the pair remain
/// simultaneously feasible at every estimate within eps(x) of x.
inline double prop1_eps_bar(const BarrierFunction& bf1, const BarrierFunction& bf2,
                            const ControlAffineSystem& sys, const State& x,
                            const LipschitzBundle& lips) {
  return 0.5 * lemma5_threshold(prop1_params(bf1, bf2, sys, x, lips));
}

}  // namespace mrcbf
