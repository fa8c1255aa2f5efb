#pragma once

#include "mrcbf/barrier.hpp"
#include "mrcbf/csv.hpp"
#include "mrcbf/dynamics.hpp"
#include "mrcbf/perception.hpp"
#include "mrcbf/robust_filter.hpp"
#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrcbf {

/// Full-state PD law u = -kp (theta - theta_star) - kd theta_dot - kr r - kr_dot r_dot.
/// The defaults are LQR gains for the default Segway linearized at equilibrium.
struct PDGains {
  double kp = -89.876;
  double kd = -20.375;
  double kr = -4.4721;
  double kr_dot = -11.061;
  double theta_star = 0.138;

  void validate() const {
    require(std::isfinite(kp) && std::isfinite(kd) && std::isfinite(kr) && std::isfinite(kr_dot) &&
                std::isfinite(theta_star),
            "PDGains: gains must be finite");
  }

  /// Row K with u = -K (x - x_eq).
  RowVector as_row() const {
    RowVector K(4);
    K[segway_index::r] = kr;
    K[segway_index::r_dot] = kr_dot;
    K[segway_index::theta] = kp;
    K[segway_index::theta_dot] = kd;
    return K;
  }
};

inline Input pd_controller(const PDGains& gains, const State& x_hat) {
  gains.validate();
  require_dim(x_hat.size(), 4, "pd_controller");
  return Input::Constant(1, -gains.kp * (x_hat[segway_index::theta] - gains.theta_star) -
                                gains.kd * x_hat[segway_index::theta_dot] - gains.kr * x_hat[segway_index::r] -
                                gains.kr_dot * x_hat[segway_index::r_dot]);
}

struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Classical RK4 step with the input held constant over the step.
inline State rk4_step(const ControlAffineSystem& sys, const State& x, const Input& u, double dt) {
  require(dt > 0.0, "rk4_step: dt must be positive");
  const State k1 = sys.closed_loop(x, u);
  const State k2 = sys.closed_loop(x + 0.5 * dt * k1, u);
  const State k3 = sys.closed_loop(x + 0.5 * dt * k2, u);
  const State k4 = sys.closed_loop(x + dt * k3, u);
  State out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!out.allFinite()) throw SimulationError("rk4_step: non-finite state");
  return out;
}

enum class ScenarioKind { worst_case_offset, learned_perception, perfect_state, bounded_random };
enum class FilterKind { none, cbf_qp, mr_op, r_mr_op };
/// How the learned scenario sets eps(y): a fixed value or the nonparametric bound at the estimate.
enum class EpsMode { fixed, nonparametric };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::worst_case_offset: return "worst_case_offset";
    case ScenarioKind::learned_perception: return "learned_perception";
    case ScenarioKind::perfect_state: return "perfect_state";
    case ScenarioKind::bounded_random: return "bounded_random";
  }
  return "unknown";
}

inline const char* to_string(FilterKind k) {
  switch (k) {
    case FilterKind::none: return "none";
    case FilterKind::cbf_qp: return "cbf_qp";
    case FilterKind::mr_op: return "mr_op";
    case FilterKind::r_mr_op: return "r_mr_op";
  }
  return "unknown";
}

inline const char* to_string(EpsMode m) { return m == EpsMode::fixed ? "fixed" : "nonparametric"; }

struct Scenario {
  ScenarioKind kind = ScenarioKind::perfect_state;
  FilterKind filter = FilterKind::none;
  /// Pitch offset of the worst-case scenario and error radius of bounded_random.
  double offset_eps = 0.2;
  /// eps(y) used by the filter in the learned scenario when eps_mode is fixed.
  double learned_eps = 0.2;
  EpsMode eps_mode = EpsMode::fixed;
  /// eps used when the regressor falls back to the nearest neighbour.
  double eps_max = 0.5;
  State initial_state = State::Zero(4);
  double duration = 5.0;
  double control_rate = 100.0;
  double integrator_dt = 1e-3;
  double perception_rate = 15.0;
  double penalty = 1e3;
  int failure_streak_limit = 100;
  std::uint64_t noise_seed = 1;

  void validate() const {
    require(duration > 0.0 && std::isfinite(duration), "Scenario: duration must be positive");
    require(control_rate >= 1.0 && std::isfinite(control_rate), "Scenario: control_rate must be >= 1");
    require(integrator_dt > 0.0 && integrator_dt <= 1.0 / control_rate + 1e-15,
            "Scenario: integrator_dt must be in (0, 1 / control_rate]");
    require(perception_rate > 0.0 && std::isfinite(perception_rate), "Scenario: perception_rate must be positive");
    require(offset_eps >= 0.0 && learned_eps >= 0.0 && eps_max >= 0.0, "Scenario: eps values must be nonnegative");
    require(penalty > 0.0, "Scenario: penalty must be positive");
    require(failure_streak_limit >= 1, "Scenario: failure_streak_limit must be >= 1");
    require_dim(initial_state.size(), 4, "Scenario: initial_state");
    require(initial_state.allFinite(), "Scenario: non-finite initial state");
  }
};

/// Camera model on (r, theta) with the NW inverse; velocities arrive on a direct channel.
struct LearnedPerception {
  MeasurementModel camera;
  NWRegressor regressor;
  std::optional<NonparametricBound> bound;
};

struct SimSetup {
  ControlAffineSystem sys;
  std::vector<RobustBarrier> barriers;
  PDGains gains;
  std::optional<LearnedPerception> perception;
  SolverTolerances tolerances;

  std::vector<BarrierFunction> plain_barriers() const {
    std::vector<BarrierFunction> out;
    for (const auto& rb : barriers) out.push_back(rb.barrier);
    return out;
  }
};

/// Segway with the pitch barrier pair and grid-estimated Lipschitz bundles.
inline SimSetup segway_setup(const SegwayParams& params, const SegwayBarrierConfig& barrier, const Box& lipschitz_box,
                             double safety_factor = 1.2, const PDGains& gains = {}) {
  SimSetup out;
  out.sys = segway_system(params);
  const auto [h1, h2] = segway_barriers(barrier);
  out.barriers = {{h1, estimate_lipschitz(h1, out.sys, lipschitz_box, safety_factor)},
                  {h2, estimate_lipschitz(h2, out.sys, lipschitz_box, safety_factor)}};
  out.gains = gains;
  return out;
}

struct Estimate {
  Measurement y;
  State x_hat;
  double eps = 0.0;
  bool fallback = false;
};

inline State position_pitch(const State& x) {
  State z(2);
  z << x[segway_index::r], x[segway_index::theta];
  return z;
}

/// y, x_hat and eps(y) for the scenario at the true state x.
template <typename Rng>
Estimate measure_and_estimate(const Scenario& sc, const SimSetup& setup, const State& x, Rng& rng) {
  require_dim(x.size(), 4, "measure_and_estimate");
  Estimate out;
  switch (sc.kind) {
    case ScenarioKind::perfect_state:
      out.y = x;
      out.x_hat = x;
      out.eps = 0.0;
      break;
    case ScenarioKind::worst_case_offset:
      out.y = x;
      out.y[segway_index::theta] -= sc.offset_eps;
      out.x_hat = out.y;
      out.eps = sc.offset_eps;
      break;
    case ScenarioKind::bounded_random: {
      std::normal_distribution<double> n01;
      Vector dir(4);
      for (int i = 0; i < 4; ++i) dir[i] = n01(rng);
      out.x_hat = x + sc.offset_eps * dir / dir.norm();
      out.y = out.x_hat;
      out.eps = sc.offset_eps;
      break;
    }
    case ScenarioKind::learned_perception: {
      require(setup.perception.has_value(), "measure_and_estimate: learned scenario needs a regressor");
      const auto& lp = *setup.perception;
      const Measurement cam = lp.camera.measure(position_pitch(x));
      out.y = Measurement(cam.size() + 2);
      out.y << cam, x[segway_index::r_dot], x[segway_index::theta_dot];
      const auto pred = lp.regressor.predict_detailed(cam);
      out.x_hat = x;
      out.x_hat[segway_index::r] = pred.value[0];
      out.x_hat[segway_index::theta] = pred.value[1];
      out.fallback = pred.fallback;
      if (pred.fallback) {
        out.eps = sc.eps_max;
      } else if (sc.eps_mode == EpsMode::fixed) {
        out.eps = sc.learned_eps;
      } else {
        require(lp.bound.has_value(), "measure_and_estimate: nonparametric eps needs a bound");
        const auto& ts = lp.regressor.training.true_states;
        out.eps = std::min(sc.eps_max, nonparam_error_bound(*lp.bound, ts, position_pitch(out.x_hat)));
      }
      break;
    }
  }
  return out;
}

struct LogRecord {
  double t = 0.0;
  State x;
  Measurement y;
  State x_hat;
  double err = 0.0;
  double u = 0.0;
  double slack = 0.0;
  double h1 = 0.0;
  double h2 = 0.0;
  double hb_x = 0.0;
  double hb_xhat = 0.0;
  FilterStatus status = FilterStatus::optimal;
  bool fallback = false;
};

struct TrajectoryLog {
  std::vector<LogRecord> records;
  /// Smallest h_b over every integrator sub-step, not just control ticks.
  double min_hb_substep = kInf;
};

inline FilterResult apply_filter(const Scenario& sc, const SimSetup& setup, const Estimate& est, const Input& u_des) {
  switch (sc.filter) {
    case FilterKind::none: {
      FilterResult r;
      r.input = u_des;
      r.status = FilterStatus::optimal;
      return r;
    }
    case FilterKind::cbf_qp: return cbf_qp_filter(setup.plain_barriers(), setup.sys, est.x_hat, u_des);
    case FilterKind::mr_op:
      return mrop_filter(mr_constraints(setup.barriers, setup.sys, est.x_hat, est.eps), u_des, {}, setup.tolerances);
    case FilterKind::r_mr_op:
      return mrop_filter(mr_constraints(setup.barriers, setup.sys, est.x_hat, est.eps), u_des,
                         RelaxationConfig{sc.penalty, true}, setup.tolerances);
  }
  throw std::logic_error("apply_filter: unknown filter");
}

inline double hb_value(const std::vector<RobustBarrier>& barriers, const State& x) {
  double hb = kInf;
  for (const auto& rb : barriers) hb = std::min(hb, rb.barrier.value(x));
  return hb;
}

/// Control loop at control_rate with a zero-order-hold input integrated by RK4
/// at integrator_dt. The learned scenario refreshes its camera estimate at
/// perception_rate and holds it between frames; velocities are read every tick.
inline TrajectoryLog run(const Scenario& sc, const SimSetup& setup) {
  sc.validate();
  require(!setup.barriers.empty(), "run: no barriers");
  require_dim(setup.sys.n, 4, "run: Segway-shaped system");
  std::mt19937_64 rng(sc.noise_seed);
  const double period = 1.0 / sc.control_rate;
  const auto steps = static_cast<long>(std::llround(sc.duration * sc.control_rate));
  const int substeps = std::max(1, static_cast<int>(std::ceil(period / sc.integrator_dt - 1e-9)));
  const double dt = period / substeps;

  TrajectoryLog log;
  log.records.reserve(static_cast<std::size_t>(steps));
  State x = sc.initial_state;
  log.min_hb_substep = hb_value(setup.barriers, x);
  std::optional<Estimate> held;
  long next_frame = 0;
  int failure_streak = 0;

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * period;
    Estimate est;
    if (sc.kind == ScenarioKind::learned_perception) {
      if (!held || t + 1e-12 >= static_cast<double>(next_frame) / sc.perception_rate) {
        held = measure_and_estimate(sc, setup, x, rng);
        while (static_cast<double>(next_frame) / sc.perception_rate <= t + 1e-12) ++next_frame;
      }
      est = *held;
      est.x_hat[segway_index::r_dot] = x[segway_index::r_dot];
      est.x_hat[segway_index::theta_dot] = x[segway_index::theta_dot];
      est.y.tail(2) << x[segway_index::r_dot], x[segway_index::theta_dot];
    } else {
      est = measure_and_estimate(sc, setup, x, rng);
    }

    const Input u_des = pd_controller(setup.gains, est.x_hat);
    const FilterResult fr = apply_filter(sc, setup, est, u_des);
    failure_streak = fr.feasible() ? 0 : failure_streak + 1;
    if (failure_streak > sc.failure_streak_limit) {
      throw SimulationError("run: filter failed on " + std::to_string(failure_streak) + " consecutive steps at t = " +
                            format_number(t));
    }
    if (!fr.input.allFinite()) throw SimulationError("run: non-finite filter output at t = " + format_number(t));

    LogRecord rec;
    rec.t = t;
    rec.x = x;
    rec.y = est.y;
    rec.x_hat = est.x_hat;
    rec.err = (est.x_hat - x).norm();
    rec.u = fr.input[0];
    rec.slack = fr.slack;
    rec.h1 = setup.barriers[0].barrier.value(x);
    rec.h2 = setup.barriers.size() > 1 ? setup.barriers[1].barrier.value(x) : rec.h1;
    rec.hb_x = hb_value(setup.barriers, x);
    rec.hb_xhat = hb_value(setup.barriers, est.x_hat);
    rec.status = fr.status;
    rec.fallback = est.fallback;
    log.records.push_back(std::move(rec));

    for (int s = 0; s < substeps; ++s) {
      x = rk4_step(setup.sys, x, fr.input, dt);
      log.min_hb_substep = std::min(log.min_hb_substep, hb_value(setup.barriers, x));
    }
  }
  return log;
}

struct SafetyReport {
  double min_hb_x = kInf;
  double min_hb_xhat = kInf;
  double min_hb_substep = kInf;
  std::optional<double> first_crossing;
  double max_error = 0.0;
  double max_slack = 0.0;
  std::size_t infeasible_steps = 0;
  std::size_t fallback_steps = 0;
  std::size_t records = 0;

  bool safe() const { return min_hb_substep >= 0.0 && min_hb_x >= 0.0; }
};

inline SafetyReport safety_audit(const TrajectoryLog& log) {
  require(!log.records.empty(), "safety_audit: empty log");
  SafetyReport out;
  out.records = log.records.size();
  for (const auto& r : log.records) {
    out.min_hb_x = std::min(out.min_hb_x, r.hb_x);
    out.min_hb_xhat = std::min(out.min_hb_xhat, r.hb_xhat);
    if (!out.first_crossing && r.hb_x < 0.0) out.first_crossing = r.t;
    out.max_error = std::max(out.max_error, r.err);
    out.max_slack = std::max(out.max_slack, r.slack);
    out.infeasible_steps += r.status == FilterStatus::optimal ? 0 : 1;
    out.fallback_steps += r.fallback ? 1 : 0;
  }
  out.min_hb_substep = std::min(log.min_hb_substep, out.min_hb_x);
  return out;
}

/// key=value block, one per line.
inline void write_audit(std::ostream& os, const SafetyReport& rep) {
  os << "records=" << rep.records << '\n'
     << "min_hb_x=" << format_number(rep.min_hb_x) << '\n'
     << "min_hb_xhat=" << format_number(rep.min_hb_xhat) << '\n'
     << "min_hb_substep=" << format_number(rep.min_hb_substep) << '\n'
     << "first_crossing=" << (rep.first_crossing ? format_number(*rep.first_crossing) : std::string("none")) << '\n'
     << "max_error=" << format_number(rep.max_error) << '\n'
     << "max_slack=" << format_number(rep.max_slack) << '\n'
     << "infeasible_steps=" << rep.infeasible_steps << '\n'
     << "fallback_steps=" << rep.fallback_steps << '\n'
     << "safe=" << (rep.safe() ? "true" : "false") << '\n';
}

inline void write_trajectory_csv(std::ostream& os, const TrajectoryLog& log) {
  require(!log.records.empty(), "write_trajectory_csv: empty log");
  const Eigen::Index ny = log.records.front().y.size();
  os << "t,x0,x1,x2,x3";
  for (Eigen::Index i = 0; i < ny; ++i) os << ",y" << i;
  os << ",xhat0,xhat1,xhat2,xhat3,err,u,slack,h1,h2,hb_x,hb_xhat,status\n";
  for (const auto& r : log.records) {
    os << format_number(r.t);
    for (Eigen::Index i = 0; i < 4; ++i) os << ',' << format_number(r.x[i]);
    for (Eigen::Index i = 0; i < ny; ++i) os << ',' << format_number(r.y[i]);
    for (Eigen::Index i = 0; i < 4; ++i) os << ',' << format_number(r.x_hat[i]);
    os << ',' << format_number(r.err) << ',' << format_number(r.u) << ',' << format_number(r.slack) << ','
       << format_number(r.h1) << ',' << format_number(r.h2) << ',' << format_number(r.hb_x) << ','
       << format_number(r.hb_xhat) << ',' << to_string(r.status) << '\n';
  }
}

/// Closed polyline of the safe set of the pitch barrier pair in the
/// (theta, theta_dot) plane. The set is the strip |theta_dot + alpha_e (theta - theta_star)| <= alpha_e c,
/// clipped here to |theta - theta_star| <= span.
inline std::vector<std::pair<double, double>> safe_set_polygon(const SegwayBarrierConfig& cfg, double span) {
  require(span > 0.0, "safe_set_polygon: span must be positive");
  const double ts = cfg.theta_star, w = cfg.alpha_e * cfg.c, ae = cfg.alpha_e;
  return {{ts - span, ae * span - w}, {ts + span, -ae * span - w}, {ts + span, -ae * span + w},
          {ts - span, ae * span + w}, {ts - span, ae * span - w}};
}

}  // namespace mrcbf
