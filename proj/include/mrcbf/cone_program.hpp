#pragma once

#include "mrcbf/types.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace mrcbf {

/// Second-order cone program in standard form
///
///   minimize    cost' z
///   subject to  eq_matrix z = eq_offset
///               constraint_matrix z + s = offset,  s in Q^{d_1} x ... x Q^{d_K}
///
/// where Q^d = {(s0, s1) in R x R^{d-1} : s0 >= ||s1||_2}. A cone of dimension
/// one is a nonnegativity constraint.
struct ConeProgram {
  Vector cost;
  Matrix constraint_matrix;
  Vector offset;
  std::vector<int> cone_dims;
  Matrix eq_matrix;
  Vector eq_offset;

  Eigen::Index num_variables() const { return cost.size(); }
  Eigen::Index num_cone_rows() const { return constraint_matrix.rows(); }
  Eigen::Index num_equalities() const { return eq_matrix.rows(); }

  int cone_row_total() const { return std::accumulate(cone_dims.begin(), cone_dims.end(), 0); }

  void validate() const {
    require(cost.size() > 0, "ConeProgram: empty cost vector");
    require(constraint_matrix.cols() == cost.size(), "ConeProgram: constraint_matrix column count");
    require(offset.size() == constraint_matrix.rows(), "ConeProgram: offset length");
    require(cone_row_total() == constraint_matrix.rows(),
            "ConeProgram: row count must equal the sum of cone dimensions");
    for (int d : cone_dims) require(d >= 1, "ConeProgram: cone dimensions must be positive");
    if (eq_matrix.size() > 0 || eq_offset.size() > 0) {
      require(eq_matrix.cols() == cost.size(), "ConeProgram: eq_matrix column count");
      require(eq_offset.size() == eq_matrix.rows(), "ConeProgram: eq_offset length");
    }
    require(cost.allFinite() && constraint_matrix.allFinite() && offset.allFinite(),
            "ConeProgram: non-finite data");
    require(eq_matrix.allFinite() && eq_offset.allFinite(), "ConeProgram: non-finite equality data");
  }

  /// Cone slack s = offset - constraint_matrix z.
  Vector slack(const Vector& z) const { return offset - constraint_matrix * z; }

  /// Smallest s0 - ||s1|| over the cone blocks at z.
  double min_cone_margin(const Vector& z) const {
    const Vector s = slack(z);
    double worst = kInf;
    Eigen::Index row = 0;
    for (int d : cone_dims) {
      const double head = s[row];
      const double tail = d > 1 ? s.segment(row + 1, d - 1).norm() : 0.0;
      worst = std::min(worst, head - tail);
      row += d;
    }
    return cone_dims.empty() ? 0.0 : worst;
  }

  double equality_residual(const Vector& z) const {
    if (num_equalities() == 0) return 0.0;
    return (eq_matrix * z - eq_offset).cwiseAbs().maxCoeff();
  }

  bool is_feasible(const Vector& z, double tol = 1e-8) const {
    return min_cone_margin(z) >= -tol && equality_residual(z) <= tol;
  }
};

/// Orthogonal map R with R (t, 1, u) = ((t+1)/sqrt2, (t-1)/sqrt2, u); it sends the
/// rotated cone ||u||^2 <= 2t onto the standard cone Q^{m+2}.
inline Matrix rotated_cone_embed(int m) {
  require(m >= 1, "rotated_cone_embed: m must be at least 1");
  const double r = 1.0 / std::sqrt(2.0);
  Matrix R = Matrix::Identity(m + 2, m + 2);
  R(0, 0) = r;
  R(0, 1) = r;
  R(1, 0) = r;
  R(1, 1) = -r;
  return R;
}

/// Plain-text dump: a header line with dimensions, then cost, G (row-major), h,
/// cone dimensions and the optional equality block.
inline void write_cone_program(std::ostream& os, const ConeProgram& prog) {
  os << "# cone_program vars " << prog.num_variables() << " rows " << prog.num_cone_rows()
     << " cones " << prog.cone_dims.size() << " eq " << prog.num_equalities() << "\n";
  auto row = [&os](const auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? " " : "") << std::setprecision(17) << v[i];
    os << "\n";
  };
  os << "cost\n";
  row(prog.cost);
  os << "G\n";
  for (Eigen::Index r = 0; r < prog.constraint_matrix.rows(); ++r) {
    row(Vector(prog.constraint_matrix.row(r).transpose()));
  }
  os << "h\n";
  row(prog.offset);
  os << "cone_dims\n";
  for (std::size_t i = 0; i < prog.cone_dims.size(); ++i) os << (i ? " " : "") << prog.cone_dims[i];
  os << "\n";
  if (prog.num_equalities() > 0) {
    os << "A\n";
    for (Eigen::Index r = 0; r < prog.eq_matrix.rows(); ++r) row(Vector(prog.eq_matrix.row(r).transpose()));
    os << "b\n";
    row(prog.eq_offset);
  }
}

inline std::string to_text(const ConeProgram& prog) {
  std::ostringstream os;
  write_cone_program(os, prog);
  return os.str();
}

}  // namespace mrcbf
