#pragma once

#include "mrcbf/cone_program.hpp"
#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace mrcbf {

enum class SolveStatus { optimal, infeasible, unbounded, max_iters, numerical_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::unbounded: return "unbounded";
    case SolveStatus::max_iters: return "max_iters";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "unknown";
}

struct SolverTolerances {
  double feas = 1e-8;
  double gap = 1e-8;
  double rel_gap = 1e-8;
  int max_iters = 100;
  double step_fraction = 0.99;
  double static_reg = 1e-10;
  int refinement_steps = 3;
  /// Loosening applied to feas/gap when falling back to the best iterate.
  double reduced_factor = 1e3;
  /// Per-iteration progress lines on stderr.
  bool verbose = false;
};

struct SolveReport {
  Vector solution;
  SolveStatus status = SolveStatus::numerical_failure;
  int iterations = 0;
  double primal_residual = kInf;
  double dual_residual = kInf;
  double duality_gap = kInf;
  double primal_objective = kInf;
  double dual_objective = -kInf;
  /// Set when the solver stalled and returned its best iterate.
  bool reduced_accuracy = false;
  /// Dual variables of the cone and equality blocks (scaled back by tau).
  Vector cone_dual;
  Vector eq_dual;
  Vector slack;
};

namespace socp {

// Jordan algebra helpers for a product of second-order cones, laid out block by
// block as in ConeProgram::cone_dims.

inline Vector identity(const std::vector<int>& dims, Eigen::Index rows) {
  Vector e = Vector::Zero(rows);
  Eigen::Index r = 0;
  for (int d : dims) {
    e[r] = 1.0;
    r += d;
  }
  return e;
}

inline Vector jordan_product(const std::vector<int>& dims, const Vector& u, const Vector& v) {
  Vector w(u.size());
  Eigen::Index r = 0;
  for (int d : dims) {
    w[r] = u.segment(r, d).dot(v.segment(r, d));
    if (d > 1) w.segment(r + 1, d - 1) = u[r] * v.segment(r + 1, d - 1) + v[r] * u.segment(r + 1, d - 1);
    r += d;
  }
  return w;
}

// Solves lambda o v = w for v.
inline Vector jordan_divide(const std::vector<int>& dims, const Vector& lambda, const Vector& w) {
  Vector v(w.size());
  Eigen::Index r = 0;
  for (int d : dims) {
    const double l0 = lambda[r];
    if (d == 1) {
      v[r] = w[r] / l0;
    } else {
      const auto l1 = lambda.segment(r + 1, d - 1);
      const auto w1 = w.segment(r + 1, d - 1);
      const double det = l0 * l0 - l1.squaredNorm();
      v[r] = (l0 * w[r] - l1.dot(w1)) / det;
      v.segment(r + 1, d - 1) = (w1 - v[r] * l1) / l0;
    }
    r += d;
  }
  return v;
}

/// Largest alpha such that x + a dx stays in the cone for all a in [0, alpha);
/// +inf when the ray never leaves it.
inline double max_step(const std::vector<int>& dims, const Vector& x, const Vector& dx) {
  double alpha = kInf;
  Eigen::Index r = 0;
  for (int d : dims) {
    const double x0 = x[r];
    const double d0 = dx[r];
    double qa = d0 * d0;
    double qb = x0 * d0;
    double qc = x0 * x0;
    if (d > 1) {
      const auto x1 = x.segment(r + 1, d - 1);
      const auto d1 = dx.segment(r + 1, d - 1);
      qa -= d1.squaredNorm();
      qb -= x1.dot(d1);
      qc -= x1.squaredNorm();
    }
    // q(a) = qa a^2 + 2 qb a + qc > 0 on the interior; first positive root exits.
    // The head must stay positive as well; this also catches the double root
    // that rounding can hide when the tail stays at zero.
    double root = d0 < 0.0 ? -x0 / d0 : kInf;
    if (d > 1 && std::abs(qa) <= 1e-300) {
      if (qb < 0.0) root = std::min(root, -qc / (2.0 * qb));
    } else if (d > 1) {
      const double disc = qb * qb - qa * qc;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double q = -(qb + std::copysign(sq, qb));
        const double r1 = q / qa;
        const double r2 = q != 0.0 ? qc / q : kInf;
        for (double cand : {r1, r2}) {
          if (cand > 0.0) root = std::min(root, cand);
        }
      }
    }
    alpha = std::min(alpha, root);
    r += d;
  }
  return alpha;
}

/// Nesterov-Todd scaling for a product of second-order cones.
struct NTScaling {
  std::vector<int> dims;
  Matrix W;      // block diagonal, symmetric
  Matrix W_inv;  // block diagonal inverse
  Vector lambda; // W z == W^{-1} s

  NTScaling(const std::vector<int>& cone_dims, const Vector& s, const Vector& z)
      : dims(cone_dims),
        W(Matrix::Zero(s.size(), s.size())),
        W_inv(Matrix::Zero(s.size(), s.size())) {
    Eigen::Index r = 0;
    for (int d : dims) {
      if (d == 1) {
        const double w = std::sqrt(s[r] / z[r]);
        W(r, r) = w;
        W_inv(r, r) = 1.0 / w;
      } else {
        const auto sb = s.segment(r, d);
        const auto zb = z.segment(r, d);
        const double s_det = sb[0] * sb[0] - sb.tail(d - 1).squaredNorm();
        const double z_det = zb[0] * zb[0] - zb.tail(d - 1).squaredNorm();
        const double s_nrm = std::sqrt(s_det);
        const double z_nrm = std::sqrt(z_det);
        const Vector s_bar = sb / s_nrm;
        const Vector z_bar = zb / z_nrm;
        const double gamma = std::sqrt(0.5 * (1.0 + s_bar.dot(z_bar)));
        Vector w_bar(d);
        w_bar[0] = (s_bar[0] + z_bar[0]) / (2.0 * gamma);
        w_bar.tail(d - 1) = (s_bar.tail(d - 1) - z_bar.tail(d - 1)) / (2.0 * gamma);
        const double eta = std::sqrt(s_nrm / z_nrm);
        const auto w1 = w_bar.tail(d - 1);
        Matrix block(d, d);
        block(0, 0) = w_bar[0];
        block.block(0, 1, 1, d - 1) = w1.transpose();
        block.block(1, 0, d - 1, 1) = w1;
        block.block(1, 1, d - 1, d - 1) =
            Matrix::Identity(d - 1, d - 1) + w1 * w1.transpose() / (1.0 + w_bar[0]);
        Matrix inv = block;
        inv.block(0, 1, 1, d - 1) *= -1.0;
        inv.block(1, 0, d - 1, 1) *= -1.0;
        W.block(r, r, d, d) = eta * block;
        W_inv.block(r, r, d, d) = inv / eta;
      }
      r += d;
    }
    lambda = W * z;
  }
};

/// Dense LDL' of a symmetric quasi-definite matrix with static and dynamic
/// regularization. `positive` marks pivots expected to be positive.
class QuasiDefiniteLdlt {
 public:
  QuasiDefiniteLdlt(const Matrix& K, const std::vector<bool>& positive, double reg)
      : L_(Matrix::Identity(K.rows(), K.rows())), D_(K.rows()) {
    const Eigen::Index n = K.rows();
    Matrix work = K;
    for (Eigen::Index i = 0; i < n; ++i) work(i, i) += positive[static_cast<std::size_t>(i)] ? reg : -reg;
    for (Eigen::Index j = 0; j < n; ++j) {
      double dj = work(j, j);
      for (Eigen::Index k = 0; k < j; ++k) dj -= L_(j, k) * L_(j, k) * D_[k];
      const bool pos = positive[static_cast<std::size_t>(j)];
      if (pos && dj < reg) dj = reg;
      if (!pos && dj > -reg) dj = -reg;
      D_[j] = dj;
      for (Eigen::Index i = j + 1; i < n; ++i) {
        double lij = work(i, j);
        for (Eigen::Index k = 0; k < j; ++k) lij -= L_(i, k) * L_(j, k) * D_[k];
        L_(i, j) = lij / dj;
      }
    }
  }

  Vector solve(const Vector& rhs) const {
    Vector y = L_.triangularView<Eigen::UnitLower>().solve(rhs);
    y.array() /= D_.array();
    return L_.transpose().triangularView<Eigen::UnitUpper>().solve(y);
  }

 private:
  Matrix L_;
  Vector D_;
};

/// KKT system [[0, A', G'], [A, 0, 0], [G, 0, -W'W]] factored in the order
/// (cone rows, variables, equalities) so every pivot block is definite.
class KktSolver {
 public:
  KktSolver(const ConeProgram& prog, const Matrix& WtW, const SolverTolerances& tol)
      : nx_(prog.num_variables()), ny_(prog.num_equalities()), nz_(prog.num_cone_rows()),
        refinement_(tol.refinement_steps) {
    const Eigen::Index n = nx_ + ny_ + nz_;
    // Permuted layout: [z | x | y].
    K_ = Matrix::Zero(n, n);
    K_.block(0, 0, nz_, nz_) = -WtW;
    K_.block(0, nz_, nz_, nx_) = prog.constraint_matrix;
    K_.block(nz_, 0, nx_, nz_) = prog.constraint_matrix.transpose();
    if (ny_ > 0) {
      K_.block(nz_ + nx_, nz_, ny_, nx_) = prog.eq_matrix;
      K_.block(nz_, nz_ + nx_, nx_, ny_) = prog.eq_matrix.transpose();
    }
    std::vector<bool> positive(static_cast<std::size_t>(n), false);
    for (Eigen::Index i = nz_; i < nz_ + nx_; ++i) positive[static_cast<std::size_t>(i)] = true;
    ldlt_ = std::make_unique<QuasiDefiniteLdlt>(K_, positive, tol.static_reg);
  }

  /// Solves for (dx, dy, dz) given right-hand sides in the natural order.
  bool solve(const Vector& rx, const Vector& ry, const Vector& rz, Vector& dx, Vector& dy,
             Vector& dz) const {
    Vector rhs(nz_ + nx_ + ny_);
    rhs << rz, rx, ry;
    Vector sol = ldlt_->solve(rhs);
    for (int k = 0; k < refinement_; ++k) {
      const Vector res = rhs - K_ * sol;
      if (res.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) break;
      sol += ldlt_->solve(res);
    }
    const Vector res = rhs - K_ * sol;
    if (!sol.allFinite() || res.lpNorm<Eigen::Infinity>() > 1e-6 * (1.0 + rhs.lpNorm<Eigen::Infinity>())) {
      // Regularized factorization was not accurate enough; fall back to pivoted LU.
      sol = K_.fullPivLu().solve(rhs);
      if (!sol.allFinite()) return false;
    }
    dz = sol.head(nz_);
    dx = sol.segment(nz_, nx_);
    dy = sol.tail(ny_);
    return true;
  }

 private:
  Eigen::Index nx_, ny_, nz_;
  int refinement_;
  Matrix K_;
  std::unique_ptr<QuasiDefiniteLdlt> ldlt_;
};

}  // namespace socp

/// Primal-dual interior-point method on the homogeneous self-dual embedding
/// with Nesterov-Todd scaling and Mehrotra predictor-corrector steps.
///
/// Starts from x = 0, y = 0, s = z = e (the unit central ray of each cone),
/// tau = kappa = 1. Infeasibility is declared from the usual certificates
/// (h'z + b'y < 0 with small A'y + G'z, or c'x < 0 with small Ax, Gx + s).
class ConeSolver {
 public:
  explicit ConeSolver(SolverTolerances tol = {}) : tol_(tol) {}

  SolveReport solve(const ConeProgram& prog) const {
    prog.validate();
    using namespace socp;
    const auto& dims = prog.cone_dims;
    const Matrix& G = prog.constraint_matrix;
    const Vector& h = prog.offset;
    const Vector& c = prog.cost;
    const Eigen::Index nx = prog.num_variables();
    const Eigen::Index ny = prog.num_equalities();
    const Eigen::Index nz = prog.num_cone_rows();
    const Matrix A = ny > 0 ? prog.eq_matrix : Matrix(0, nx);
    const Vector b = ny > 0 ? prog.eq_offset : Vector(0);
    const double degree = static_cast<double>(dims.size());

    const Vector e = identity(dims, nz);
    Vector x = Vector::Zero(nx);
    Vector y = Vector::Zero(ny);
    Vector s = e;
    Vector z = e;
    double tau = 1.0;
    double kappa = 1.0;

    const double norm_c = std::max(1.0, c.norm());
    const double norm_hb = std::max({1.0, h.norm(), ny > 0 ? b.norm() : 0.0});

    SolveReport report;
    struct Best {
      double merit = kInf;
      int iter = 0;
      Vector x, y, z, s;
      double tau = 1.0, kappa = 1.0, pres = kInf, dres = kInf, gap = kInf;
    } best;
    auto fill = [&](SolveStatus status, int iters) {
      if ((status == SolveStatus::numerical_failure || status == SolveStatus::max_iters) &&
          std::isfinite(best.merit)) {
        x = best.x;
        y = best.y;
        z = best.z;
        s = best.s;
        tau = best.tau;
        kappa = best.kappa;
        report.primal_residual = best.pres;
        report.dual_residual = best.dres;
        report.duality_gap = best.gap;
        status = SolveStatus::optimal;
        report.reduced_accuracy = true;
      }
      report.status = status;
      report.iterations = iters;
      report.solution = x / tau;
      report.cone_dual = z / tau;
      report.eq_dual = y / tau;
      report.slack = s / tau;
      report.primal_objective = c.dot(x) / tau;
      report.dual_objective = -(b.dot(y) + h.dot(z)) / tau;
    };

    for (int iter = 0; iter <= tol_.max_iters; ++iter) {
      const Vector r_dual = (ny > 0 ? Vector(A.transpose() * y) : Vector::Zero(nx)) + G.transpose() * z + c * tau;
      const Vector r_eq = ny > 0 ? Vector(A * x - b * tau) : Vector(0);
      const Vector r_cone = G * x + s - h * tau;
      const double by_hz = b.dot(y) + h.dot(z);
      const double cx = c.dot(x);
      const double r_gap = cx + by_hz + kappa;
      const double mu = (s.dot(z) + tau * kappa) / (degree + 1.0);

      report.primal_residual = std::max(r_eq.size() ? r_eq.norm() : 0.0, r_cone.norm()) / tau / norm_hb;
      report.dual_residual = r_dual.norm() / tau / norm_c;
      report.duality_gap = s.dot(z) / (tau * tau);
      const double pcost = cx / tau;
      const double dcost = -by_hz / tau;
      double rel_gap = kInf;
      if (pcost < 0.0) rel_gap = report.duality_gap / -pcost;
      if (dcost > 0.0) rel_gap = report.duality_gap / dcost;

      if (tol_.verbose) {
        std::fprintf(stderr, "it %2d pcost % .6e dcost % .6e pres %.2e dres %.2e gap %.2e tau %.2e kap %.2e\n",
                     iter, pcost, dcost, report.primal_residual, report.dual_residual, report.duality_gap,
                     tau, kappa);
      }
      // Residuals are relative to the data scale. The recovered point itself is
      // also checked against the same scaled tolerance.
      const double margin = prog.min_cone_margin(x / tau);
      const bool gap_ok = report.duality_gap <= tol_.gap || rel_gap <= tol_.rel_gap;
      if (report.primal_residual <= tol_.feas && report.dual_residual <= tol_.feas && gap_ok &&
          margin >= -tol_.feas * norm_hb) {
        fill(SolveStatus::optimal, iter);
        return report;
      }
      // Remember the best iterate that meets the reduced-accuracy tolerances in
      // case later steps stall or break down.
      const double merit = std::max({report.primal_residual, report.dual_residual,
                                     std::min(report.duality_gap, rel_gap)});
      if (report.primal_residual <= tol_.reduced_factor * tol_.feas &&
          report.dual_residual <= tol_.reduced_factor * tol_.feas &&
          (report.duality_gap <= tol_.reduced_factor * tol_.gap ||
           rel_gap <= tol_.reduced_factor * tol_.rel_gap) &&
          margin >= -tol_.feas * norm_hb && merit < best.merit) {
        best = {merit, iter, x, y, z, s, tau, kappa, report.primal_residual, report.dual_residual,
                report.duality_gap};
      }
      // Certificates, normalized by the size of the separating quantity.
      if (by_hz < 0.0) {
        const Vector aty_gtz = (ny > 0 ? Vector(A.transpose() * y) : Vector::Zero(nx)) + G.transpose() * z;
        if (aty_gtz.norm() / -by_hz <= tol_.feas && kappa > tau) {
          fill(SolveStatus::infeasible, iter);
          return report;
        }
      }
      if (cx < 0.0) {
        const double pr = std::max(ny > 0 ? Vector(A * x).norm() : 0.0, Vector(G * x + s).norm());
        if (pr / -cx <= tol_.feas && kappa > tau) {
          fill(SolveStatus::unbounded, iter);
          return report;
        }
      }
      if (iter == tol_.max_iters) break;

      const NTScaling scaling(dims, s, z);
      const Matrix WtW = scaling.W * scaling.W;
      const KktSolver kkt(prog, WtW, tol_);
      const Vector& lambda = scaling.lambda;

      Vector dx1, dy1, dz1;
      if (!kkt.solve(-c, b, h, dx1, dy1, dz1)) {
        fill(SolveStatus::numerical_failure, iter);
        return report;
      }

      struct Direction {
        Vector dx, dy, dz, ds;
        double dtau = 0.0, dkappa = 0.0;
      };
      auto direction = [&](double sigma, const Vector& rc, double rk, Direction& out) {
        const double keep = 1.0 - sigma;
        const Vector cone_term = scaling.W * jordan_divide(dims, lambda, rc);
        Vector dx0, dy0, dz0;
        if (!kkt.solve(-keep * r_dual, -keep * r_eq, -keep * r_cone - cone_term, dx0, dy0, dz0)) {
          return false;
        }
        const double num = -keep * r_gap - rk / tau - (c.dot(dx0) + b.dot(dy0) + h.dot(dz0));
        const double den = c.dot(dx1) + b.dot(dy1) + h.dot(dz1) - kappa / tau;
        out.dtau = num / den;
        out.dx = dx0 + out.dtau * dx1;
        out.dy = dy0 + out.dtau * dy1;
        out.dz = dz0 + out.dtau * dz1;
        out.ds = cone_term - WtW * out.dz;
        out.dkappa = (rk - kappa * out.dtau) / tau;
        return out.dx.allFinite() && out.dz.allFinite() && std::isfinite(out.dtau);
      };
      auto step_length = [&](const Direction& d) {
        double a = std::min(max_step(dims, s, d.ds), max_step(dims, z, d.dz));
        if (d.dtau < 0.0) a = std::min(a, -tau / d.dtau);
        if (d.dkappa < 0.0) a = std::min(a, -kappa / d.dkappa);
        return a;
      };

      // Predictor.
      Direction aff;
      const Vector rc_aff = -jordan_product(dims, lambda, lambda);
      if (!direction(0.0, rc_aff, -tau * kappa, aff)) {
        fill(SolveStatus::numerical_failure, iter);
        return report;
      }
      const double alpha_aff = std::min(1.0, step_length(aff));
      const double sigma = std::clamp(std::pow(1.0 - alpha_aff, 3), 0.0, 1.0);

      // Corrector with Mehrotra second-order term.
      const Vector ds_scaled = scaling.W_inv * aff.ds;
      const Vector dz_scaled = scaling.W * aff.dz;
      const Vector rc = -jordan_product(dims, lambda, lambda) + sigma * mu * e -
                        jordan_product(dims, ds_scaled, dz_scaled);
      const double rk = -tau * kappa + sigma * mu - aff.dtau * aff.dkappa;
      Direction dir;
      if (!direction(sigma, rc, rk, dir)) {
        fill(SolveStatus::numerical_failure, iter);
        return report;
      }
      const double alpha = std::min(1.0, tol_.step_fraction * step_length(dir));
      if (!(alpha > 1e-12)) {
        fill(SolveStatus::numerical_failure, iter);
        return report;
      }
      x += alpha * dir.dx;
      y += alpha * dir.dy;
      z += alpha * dir.dz;
      s += alpha * dir.ds;
      tau += alpha * dir.dtau;
      kappa += alpha * dir.dkappa;
    }
    fill(SolveStatus::max_iters, tol_.max_iters);
    return report;
  }

  const SolverTolerances& tolerances() const { return tol_; }

 private:
  SolverTolerances tol_;
};

inline SolveReport solve(const ConeProgram& prog, const SolverTolerances& tol = {}) {
  return ConeSolver(tol).solve(prog);
}

}  // namespace mrcbf
