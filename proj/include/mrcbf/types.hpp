#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mrcbf {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;

/// Point in state space, length n.
using State = Eigen::VectorXd;
/// Control value, length m.
using Input = Eigen::VectorXd;
/// Raw sensor output, length k.
using Measurement = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool all_finite(const Eigen::Ref<const Matrix>& v) { return v.allFinite(); }

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_dim(Eigen::Index got, Eigen::Index want, const std::string& what) {
  if (got != want) {
    throw std::invalid_argument(what + ": dimension mismatch (got " + std::to_string(got) +
                                ", expected " + std::to_string(want) + ")");
  }
}

/// Axis-aligned box with a per-axis grid resolution.
///
/// An axis with `lower == upper` is degenerate: it contributes a single grid
/// coordinate regardless of its resolution entry.
struct Box {
  Vector lower;
  Vector upper;
  std::vector<int> resolution;

  Box() = default;
  Box(Vector lo, Vector hi, std::vector<int> res)
      : lower(std::move(lo)), upper(std::move(hi)), resolution(std::move(res)) {
    validate();
  }
  Box(Vector lo, Vector hi, int points_per_axis)
      : Box(lo, hi, std::vector<int>(static_cast<std::size_t>(lo.size()), points_per_axis)) {}

  Eigen::Index dim() const { return lower.size(); }

  bool degenerate(Eigen::Index i) const { return upper[i] == lower[i]; }

  int points(Eigen::Index i) const {
    return degenerate(i) ? 1 : resolution[static_cast<std::size_t>(i)];
  }

  double spacing(Eigen::Index i) const {
    return degenerate(i) ? 0.0 : (upper[i] - lower[i]) / (points(i) - 1);
  }

  double coordinate(Eigen::Index i, int k) const {
    if (degenerate(i)) return lower[i];
    if (k == points(i) - 1) return upper[i];
    return lower[i] + spacing(i) * k;
  }

  std::size_t total_points() const {
    std::size_t total = 1;
    for (Eigen::Index i = 0; i < dim(); ++i) total *= static_cast<std::size_t>(points(i));
    return total;
  }

  /// Number of non-degenerate axes.
  int active_dims() const {
    int d = 0;
    for (Eigen::Index i = 0; i < dim(); ++i) d += degenerate(i) ? 0 : 1;
    return d;
  }

  bool contains(const Eigen::Ref<const Vector>& x, double slack = 0.0) const {
    for (Eigen::Index i = 0; i < dim(); ++i) {
      if (x[i] < lower[i] - slack || x[i] > upper[i] + slack) return false;
    }
    return true;
  }

  Vector center() const { return 0.5 * (lower + upper); }

  void validate() const {
    require(lower.size() == upper.size(), "Box: lower/upper size mismatch");
    require(static_cast<std::size_t>(lower.size()) == resolution.size(),
            "Box: resolution size mismatch");
    for (Eigen::Index i = 0; i < lower.size(); ++i) {
      require(std::isfinite(lower[i]) && std::isfinite(upper[i]), "Box: non-finite bound");
      require(lower[i] <= upper[i], "Box: lower bound above upper bound");
      require(degenerate(i) || resolution[static_cast<std::size_t>(i)] >= 2,
              "Box: resolution must be at least 2 on non-degenerate axes");
    }
  }
};

/// Visits every grid point of `box` in row-major order (last axis fastest).
template <typename Visitor>
void for_each_grid_point(const Box& box, Visitor&& visit) {
  const Eigen::Index n = box.dim();
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  Vector x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = box.coordinate(i, 0);
  const std::size_t total = box.total_points();
  for (std::size_t flat = 0; flat < total; ++flat) {
    visit(static_cast<const Vector&>(x), static_cast<const std::vector<int>&>(idx));
    for (Eigen::Index i = n - 1; i >= 0; --i) {
      auto& k = idx[static_cast<std::size_t>(i)];
      if (++k < box.points(i)) {
        x[i] = box.coordinate(i, k);
        break;
      }
      k = 0;
      x[i] = box.coordinate(i, 0);
    }
  }
}

}  // namespace mrcbf
