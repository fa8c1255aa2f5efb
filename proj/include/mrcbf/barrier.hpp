#pragma once

#include "mrcbf/dynamics.hpp"
#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mrcbf {

/// Extended class-K function alpha (zero at zero, strictly increasing).
struct ExtendedClassK {
  std::function<double(double)> evaluate;
  std::string tag = "linear";
  /// Global Lipschitz constant of alpha, when known (the gain for linear alpha).
  double lipschitz = 1.0;

  double operator()(double r) const { return evaluate(r); }

  static ExtendedClassK linear(double gain = 1.0) {
    require(gain > 0.0 && std::isfinite(gain), "ExtendedClassK: linear gain must be positive");
    return ExtendedClassK{[gain](double r) { return gain * r; }, "linear", gain};
  }
};

/// Scalar barrier h with analytic gradient; the safe set is {h >= 0}.
struct BarrierFunction {
  std::function<double(const State&)> h;
  std::function<RowVector(const State&)> grad_h;
  ExtendedClassK alpha = ExtendedClassK::linear();

  double value(const State& x) const { return h(x); }
  RowVector gradient(const State& x) const { return grad_h(x); }
  double alpha_of_h(const State& x) const { return alpha(h(x)); }
  bool contains(const State& x) const { return h(x) >= 0.0; }
};

/// Lipschitz coefficients of L_f h, L_g h and alpha(h) over a sampled box.
struct LipschitzBundle {
  double L_Lfh = 0.0;
  double L_Lgh = 0.0;
  double L_alpha_h = 0.0;
  Box grid_spec;
  double safety_factor = 1.0;

  /// L_Lfh + L_alpha_h, the coefficient of the constant robustness margin.
  double drift_sum() const { return L_Lfh + L_alpha_h; }

  void validate() const {
    require(L_Lfh >= 0.0 && std::isfinite(L_Lfh), "LipschitzBundle: L_Lfh invalid");
    require(L_Lgh >= 0.0 && std::isfinite(L_Lgh), "LipschitzBundle: L_Lgh invalid");
    require(L_alpha_h >= 0.0 && std::isfinite(L_alpha_h), "LipschitzBundle: L_alpha_h invalid");
  }
};

/// Half-width `c`, rate gain `alpha_e` and equilibrium pitch of the Segway pitch barriers.
struct SegwayBarrierConfig {
  double c = 0.1;
  double alpha_e = 2.0;
  double theta_star = 0.138;
  /// Gain of the linear class-K function used by both barriers.
  double alpha_gain = 1.0;

  void validate() const {
    require(c > 0.0 && std::isfinite(c), "SegwayBarrierConfig: c must be positive");
    require(alpha_e > 0.0 && std::isfinite(alpha_e), "SegwayBarrierConfig: alpha_e must be positive");
    require(std::isfinite(theta_star), "SegwayBarrierConfig: theta_star not finite");
    require(alpha_gain > 0.0 && std::isfinite(alpha_gain),
            "SegwayBarrierConfig: alpha_gain must be positive");
  }
};

struct LieDerivatives {
  double Lfh = 0.0;
  RowVector Lgh;
};

inline LieDerivatives lie_derivatives(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                      const State& x) {
  require_dim(x.size(), sys.n, "lie_derivatives");
  const RowVector grad = bf.gradient(x);
  require_dim(grad.size(), sys.n, "lie_derivatives: gradient");
  const Vector f = sys.f(x);
  const Matrix g = sys.g(x);
  require(g.rows() == sys.n && g.cols() == sys.m, "lie_derivatives: actuation shape mismatch");
  return {grad.dot(f), grad * g};
}

/// The forward/backward pitch barriers
///   h1 = -theta_dot + alpha_e (c - theta + theta_star)
///   h2 =  theta_dot + alpha_e (c + theta - theta_star)
inline std::pair<BarrierFunction, BarrierFunction> segway_barriers(const SegwayBarrierConfig& cfg) {
  cfg.validate();
  const double c = cfg.c;
  const double ae = cfg.alpha_e;
  const double ts = cfg.theta_star;
  const auto alpha = ExtendedClassK::linear(cfg.alpha_gain);

  BarrierFunction h1;
  h1.h = [=](const State& x) {
    return -x[segway_index::theta_dot] + ae * (c - x[segway_index::theta] + ts);
  };
  h1.grad_h = [=](const State& x) {
    RowVector g = RowVector::Zero(x.size());
    g[segway_index::theta] = -ae;
    g[segway_index::theta_dot] = -1.0;
    return g;
  };
  h1.alpha = alpha;

  BarrierFunction h2;
  h2.h = [=](const State& x) {
    return x[segway_index::theta_dot] + ae * (c + x[segway_index::theta] - ts);
  };
  h2.grad_h = [=](const State& x) {
    RowVector g = RowVector::Zero(x.size());
    g[segway_index::theta] = ae;
    g[segway_index::theta_dot] = 1.0;
    return g;
  };
  h2.alpha = alpha;
  return {h1, h2};
}

/// h_b = min of the constituent barrier values.
inline double boolean_composition(const std::vector<double>& h_values) {
  if (h_values.empty()) throw std::invalid_argument("boolean_composition: empty list");
  return *std::min_element(h_values.begin(), h_values.end());
}

inline double boolean_composition(const std::vector<BarrierFunction>& barriers, const State& x) {
  std::vector<double> values;
  values.reserve(barriers.size());
  for (const auto& bf : barriers) values.push_back(bf.value(x));
  return boolean_composition(values);
}

/// Largest slope ||F(x') - F(x)|| / ||x' - x|| over axis-adjacent grid pairs.
///
/// `fn` maps a state to a fixed-length vector. Non-finite evaluations throw.
/// Degenerate box axes contribute no pairs.
template <typename Fn>
double max_adjacent_slope(const Box& box, Fn&& fn) {
  box.validate();
  const Eigen::Index n = box.dim();
  const std::size_t total = box.total_points();
  std::vector<Vector> values;
  values.reserve(total);
  for_each_grid_point(box, [&](const Vector& x, const std::vector<int>&) {
    Vector v = fn(x);
    if (!v.allFinite()) throw std::runtime_error("max_adjacent_slope: non-finite evaluation in box");
    values.push_back(std::move(v));
  });

  std::vector<std::size_t> stride(static_cast<std::size_t>(n), 1);
  for (Eigen::Index i = n - 2; i >= 0; --i) {
    stride[static_cast<std::size_t>(i)] =
        stride[static_cast<std::size_t>(i + 1)] * static_cast<std::size_t>(box.points(i + 1));
  }

  double best = 0.0;
  for_each_grid_point(box, [&](const Vector&, const std::vector<int>& idx) {
    std::size_t flat = 0;
    for (Eigen::Index i = 0; i < n; ++i) flat += stride[static_cast<std::size_t>(i)] * idx[static_cast<std::size_t>(i)];
    for (Eigen::Index i = 0; i < n; ++i) {
      if (idx[static_cast<std::size_t>(i)] + 1 >= box.points(i)) continue;
      const std::size_t next = flat + stride[static_cast<std::size_t>(i)];
      const double dx = box.coordinate(i, idx[static_cast<std::size_t>(i)] + 1) -
                        box.coordinate(i, idx[static_cast<std::size_t>(i)]);
      const double slope = (values[next] - values[flat]).norm() / dx;
      best = std::max(best, slope);
    }
  });
  return best;
}

/// Grid estimate of the three Lipschitz coefficients over `box`, each scaled by
/// `safety_factor` to offset the grid's under-estimation.
inline LipschitzBundle estimate_lipschitz(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                          const Box& box, double safety_factor = 1.2) {
  require(safety_factor >= 1.0, "estimate_lipschitz: safety factor must be >= 1");
  require_dim(box.dim(), sys.n, "estimate_lipschitz: box");
  const double l_f = max_adjacent_slope(box, [&](const State& x) {
    return Vector::Constant(1, lie_derivatives(bf, sys, x).Lfh);
  });
  const double l_g = max_adjacent_slope(box, [&](const State& x) -> Vector {
    return lie_derivatives(bf, sys, x).Lgh.transpose();
  });
  const double l_alpha = max_adjacent_slope(box, [&](const State& x) {
    return Vector::Constant(1, bf.alpha_of_h(x));
  });

  LipschitzBundle out;
  out.L_Lfh = safety_factor * l_f;
  out.L_Lgh = safety_factor * l_g;
  out.L_alpha_h = safety_factor * l_alpha;
  out.grid_spec = box;
  out.safety_factor = safety_factor;
  return out;
}

/// Outcome of a safety-filter solve.
enum class FilterStatus { optimal, infeasible, max_iters, numerical_failure };

inline const char* to_string(FilterStatus s) {
  switch (s) {
    case FilterStatus::optimal: return "optimal";
    case FilterStatus::infeasible: return "infeasible";
    case FilterStatus::max_iters: return "max_iters";
    case FilterStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

struct FilterResult {
  Input input;
  double slack = 0.0;
  FilterStatus status = FilterStatus::optimal;
  /// Smallest (lhs - rhs) over the enforced constraints at `input`.
  double margin = 0.0;
  int iterations = 0;

  bool feasible() const { return status == FilterStatus::optimal; }
};

/// Affine input constraint a u >= b.
struct AffineConstraint {
  RowVector a;
  double b = 0.0;

  double residual(const Input& u) const { return a.dot(u) - b; }
};

/// CBF condition L_f h + L_g h u >= -alpha(h) written as L_g h u >= -alpha(h) - L_f h.
inline AffineConstraint cbf_constraint(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                       const State& x) {
  const auto lie = lie_derivatives(bf, sys, x);
  return {lie.Lgh, -bf.alpha_of_h(x) - lie.Lfh};
}

namespace detail {

inline double min_residual(const std::vector<AffineConstraint>& cons, const Input& u) {
  double r = kInf;
  for (const auto& c : cons) r = std::min(r, c.residual(u));
  return cons.empty() ? 0.0 : r;
}

// Projection of u_des onto {a_i u = b_i : i in active}; empty when the active
// rows are linearly dependent.
inline std::optional<std::pair<Input, Vector>> project_on_active(
    const std::vector<AffineConstraint>& cons, const std::vector<std::size_t>& active,
    const Input& u_des) {
  const auto k = static_cast<Eigen::Index>(active.size());
  Matrix A(k, u_des.size());
  Vector b(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    A.row(i) = cons[active[static_cast<std::size_t>(i)]].a;
    b[i] = cons[active[static_cast<std::size_t>(i)]].b;
  }
  const Matrix gram = A * A.transpose();
  Eigen::FullPivLU<Matrix> lu(gram);
  lu.setThreshold(1e-14);
  if (lu.rank() < k) return std::nullopt;
  const Vector lambda = lu.solve(b - A * u_des);
  return std::make_pair(Input(u_des + A.transpose() * lambda), lambda);
}

}  // namespace detail

/// Exact minimizer of 1/2 ||u - u_des||^2 subject to a_i u >= b_i by active-set
/// enumeration (intended for a handful of constraints).
///
/// If no input satisfies every constraint the status is `infeasible` and the
/// returned input is the least-violating candidate found.
inline FilterResult min_norm_filter(const std::vector<AffineConstraint>& cons, const Input& u_des) {
  for (const auto& c : cons) require_dim(c.a.size(), u_des.size(), "min_norm_filter");
  const std::size_t nc = cons.size();
  require(nc <= 16, "min_norm_filter: too many constraints for enumeration");
  const double feas_tol = 1e-12;

  auto scale = [&](const Input& u) { return 1.0 + u.cwiseAbs().maxCoeff(); };

  std::optional<Input> best;
  double best_cost = kInf;
  std::vector<Input> all_candidates{u_des};
  if (detail::min_residual(cons, u_des) >= -feas_tol * scale(u_des)) {
    best = u_des;
    best_cost = 0.0;
  }
  if (!best) {
    for (std::size_t mask = 1; mask < (std::size_t{1} << nc); ++mask) {
      std::vector<std::size_t> active;
      for (std::size_t i = 0; i < nc; ++i) {
        if (mask & (std::size_t{1} << i)) active.push_back(i);
      }
      if (static_cast<Eigen::Index>(active.size()) > u_des.size()) continue;
      const auto proj = detail::project_on_active(cons, active, u_des);
      if (!proj) continue;
      const Input& u = proj->first;
      all_candidates.push_back(u);
      // KKT multipliers must be nonnegative for the active set to be optimal.
      if ((proj->second.array() < -1e-12).any()) continue;
      if (detail::min_residual(cons, u) < -1e-9 * scale(u)) continue;
      const double cost = 0.5 * (u - u_des).squaredNorm();
      const bool tie = best && std::abs(cost - best_cost) <= 1e-12 * (1.0 + best_cost);
      if (!best || (cost < best_cost && !tie) || (tie && u.norm() < best->norm())) {
        best = u;
        best_cost = cost;
      }
    }
  }

  FilterResult out;
  if (best) {
    out.input = *best;
    out.status = FilterStatus::optimal;
    out.margin = detail::min_residual(cons, out.input);
    return out;
  }

  // Infeasible: pick the candidate with the smallest worst-case violation. For a
  // scalar input the optimum of max_i (b_i - a_i u) lies where two violations are equal.
  if (u_des.size() == 1) {
    for (std::size_t i = 0; i < nc; ++i) {
      for (std::size_t j = i + 1; j < nc; ++j) {
        const double da = cons[i].a[0] - cons[j].a[0];
        if (std::abs(da) > 1e-14) {
          Input u(1);
          u[0] = (cons[i].b - cons[j].b) / da;
          all_candidates.push_back(u);
        }
      }
    }
  }
  Input least = u_des;
  double least_margin = detail::min_residual(cons, u_des);
  for (const auto& u : all_candidates) {
    const double mr = detail::min_residual(cons, u);
    if (mr > least_margin + 1e-15) {
      least = u;
      least_margin = mr;
    }
  }
  out.input = least;
  out.status = FilterStatus::infeasible;
  out.margin = least_margin;
  return out;
}

/// CBF-QP safety filter over one or more barriers sharing the input.
inline FilterResult cbf_qp_filter(const std::vector<BarrierFunction>& barriers,
                                  const ControlAffineSystem& sys, const State& x,
                                  const Input& u_des) {
  require_dim(u_des.size(), sys.m, "cbf_qp_filter: u_des");
  std::vector<AffineConstraint> cons;
  cons.reserve(barriers.size());
  for (const auto& bf : barriers) {
    auto c = cbf_constraint(bf, sys, x);
    if (!c.a.allFinite() || !std::isfinite(c.b)) {
      throw std::runtime_error("cbf_qp_filter: non-finite Lie derivatives");
    }
    cons.push_back(std::move(c));
  }
  return min_norm_filter(cons, u_des);
}

inline FilterResult cbf_qp_filter(const BarrierFunction& bf, const ControlAffineSystem& sys,
                                  const State& x, const Input& u_des) {
  return cbf_qp_filter(std::vector<BarrierFunction>{bf}, sys, x, u_des);
}

}  // namespace mrcbf
