#pragma once

#include "mrcbf/types.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>

namespace mrcbf {

/// Control-affine dynamics xdot = f(x) + g(x) u.
struct ControlAffineSystem {
  int n = 0;
  int m = 0;
  std::function<Vector(const State&)> drift;
  std::function<Matrix(const State&)> actuation;
  State equilibrium;

  Vector f(const State& x) const {
    require_dim(x.size(), n, "ControlAffineSystem::f");
    return drift(x);
  }

  Matrix g(const State& x) const {
    require_dim(x.size(), n, "ControlAffineSystem::g");
    return actuation(x);
  }

  Vector closed_loop(const State& x, const Input& u) const {
    require_dim(u.size(), m, "ControlAffineSystem::closed_loop");
    return f(x) + g(x) * u;
  }
};

/// Physical parameters of the planar Segway (wheeled inverted pendulum).
///
/// Masses and inertias of the wheel are per wheel; the model has two wheels
/// that receive the same torque. `friction` is a viscous coefficient on the
/// wheel-to-body relative rate [N m s/rad].
struct SegwayParams {
  double wheel_mass = 2.0;
  double body_mass = 44.8;
  double wheel_radius = 0.195;
  double com_distance = 0.28;
  double body_inertia = 3.343;
  double wheel_inertia = 0.038;
  double gravity = 9.81;
  double friction = 0.0;
  double theta_star = 0.138;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument(std::string("SegwayParams: ") + name + " must be positive");
      }
    };
    positive(wheel_mass, "wheel_mass");
    positive(body_mass, "body_mass");
    positive(wheel_radius, "wheel_radius");
    positive(com_distance, "com_distance");
    positive(body_inertia, "body_inertia");
    positive(wheel_inertia, "wheel_inertia");
    positive(gravity, "gravity");
    if (!(friction >= 0.0) || !std::isfinite(friction)) {
      throw std::invalid_argument("SegwayParams: friction must be nonnegative");
    }
    if (!std::isfinite(theta_star)) throw std::invalid_argument("SegwayParams: theta_star not finite");
  }
};

/// State layout of the planar Segway.
namespace segway_index {
inline constexpr int r = 0;
inline constexpr int r_dot = 1;
inline constexpr int theta = 2;
inline constexpr int theta_dot = 3;
}  // namespace segway_index

namespace detail {

// Generalized coordinates (r, theta). With phi = theta - theta_star the body
// centre of mass sits at (r + l sin phi, R + l cos phi), so gravity balances at
// phi = 0. Mass matrix [[a, b cos phi], [b cos phi, c]]:
//   a = 2 m_w + 2 I_w / R^2 + m_b,  b = m_b l,  c = m_b l^2 + I_b.
// Wheel torque tau (total over both wheels, 2u) acts between wheel and body,
// giving generalized forces (tau / R, -tau).
struct SegwayTerms {
  double a, b, c, mgl;

  explicit SegwayTerms(const SegwayParams& p)
      : a(2.0 * p.wheel_mass + 2.0 * p.wheel_inertia / (p.wheel_radius * p.wheel_radius) +
          p.body_mass),
        b(p.body_mass * p.com_distance),
        c(p.body_mass * p.com_distance * p.com_distance + p.body_inertia),
        mgl(p.body_mass * p.gravity * p.com_distance) {}

  double det(double cphi) const { return a * c - b * b * cphi * cphi; }
};

}  // namespace detail

/// Total mechanical energy of the Segway, used to audit the unactuated model.
inline double segway_energy(const SegwayParams& p, const State& x) {
  const detail::SegwayTerms t(p);
  const double phi = x[segway_index::theta] - p.theta_star;
  const double rd = x[segway_index::r_dot];
  const double td = x[segway_index::theta_dot];
  const double kinetic = 0.5 * t.a * rd * rd + t.b * std::cos(phi) * rd * td + 0.5 * t.c * td * td;
  return kinetic + t.mgl * std::cos(phi);
}

/// Planar Segway, state (r, r_dot, theta, theta_dot), one wheel torque input.
inline ControlAffineSystem segway_system(const SegwayParams& params) {
  params.validate();
  const detail::SegwayTerms t(params);
  const double radius = params.wheel_radius;
  const double friction = params.friction;
  const double theta_star = params.theta_star;

  ControlAffineSystem sys;
  sys.n = 4;
  sys.m = 1;
  sys.drift = [t, radius, friction, theta_star](const State& x) {
    const double phi = x[segway_index::theta] - theta_star;
    const double sphi = std::sin(phi);
    const double cphi = std::cos(phi);
    const double rd = x[segway_index::r_dot];
    const double td = x[segway_index::theta_dot];
    const double tau_friction = -friction * (rd / radius - td);
    const double f1 = t.b * sphi * td * td + tau_friction / radius;
    const double f2 = t.mgl * sphi - tau_friction;
    const double det = t.det(cphi);
    Vector out(4);
    out[segway_index::r] = rd;
    out[segway_index::r_dot] = (t.c * f1 - t.b * cphi * f2) / det;
    out[segway_index::theta] = td;
    out[segway_index::theta_dot] = (t.a * f2 - t.b * cphi * f1) / det;
    return out;
  };
  sys.actuation = [t, radius, theta_star](const State& x) {
    const double cphi = std::cos(x[segway_index::theta] - theta_star);
    const double det = t.det(cphi);
    // Both wheels receive u: total torque 2u.
    const double f1 = 2.0 / radius;
    const double f2 = -2.0;
    Matrix out = Matrix::Zero(4, 1);
    out(segway_index::r_dot, 0) = (t.c * f1 - t.b * cphi * f2) / det;
    out(segway_index::theta_dot, 0) = (t.a * f2 - t.b * cphi * f1) / det;
    return out;
  };
  sys.equilibrium = State::Zero(4);
  sys.equilibrium[segway_index::theta] = theta_star;
  return sys;
}

/// Central-difference Jacobians (A, B) of (x, u) -> f(x) + g(x) u at u = 0.
inline std::pair<Matrix, Matrix> linearize(const ControlAffineSystem& sys, const State& x,
                                           double step = 1e-6) {
  require_dim(x.size(), sys.n, "linearize");
  Matrix A(sys.n, sys.n);
  State xp = x;
  State xm = x;
  for (int j = 0; j < sys.n; ++j) {
    xp[j] = x[j] + step;
    xm[j] = x[j] - step;
    const Vector fp = sys.f(xp);
    const Vector fm = sys.f(xm);
    if (!fp.allFinite() || !fm.allFinite()) {
      throw std::runtime_error("linearize: non-finite dynamics output");
    }
    A.col(j) = (fp - fm) / (2.0 * step);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  const Vector f0 = sys.f(x);
  const Matrix g0 = sys.g(x);
  Matrix B(sys.n, sys.m);
  for (int j = 0; j < sys.m; ++j) {
    const Vector up = f0 + g0.col(j) * step;
    const Vector um = f0 - g0.col(j) * step;
    B.col(j) = (up - um) / (2.0 * step);
  }
  if (!B.allFinite()) throw std::runtime_error("linearize: non-finite actuation output");
  return {A, B};
}

/// Linear system xdot = A x + B u, mostly for tests and tooling.
inline ControlAffineSystem linear_system(const Matrix& A, const Matrix& B) {
  require(A.rows() == A.cols(), "linear_system: A must be square");
  require(B.rows() == A.rows(), "linear_system: B row count must match A");
  ControlAffineSystem sys;
  sys.n = static_cast<int>(A.rows());
  sys.m = static_cast<int>(B.cols());
  sys.drift = [A](const State& x) -> Vector { return A * x; };
  sys.actuation = [B](const State&) -> Matrix { return B; };
  sys.equilibrium = State::Zero(sys.n);
  return sys;
}

}  // namespace mrcbf
