#pragma once

#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace mrcbf {

struct BruteForceResult {
  bool feasible = false;
  double argmin = 0.0;
  double value = kInf;
};

/// Exhaustive grid minimization of a scalar problem.
///
/// Evaluates `cost(u)` at u = lo + k step for every k with u <= hi (plus hi
/// itself) and keeps the best point where `constraint(u) >= 0`. `constraint`
/// returns the smallest constraint residual at u.
template <typename Cost, typename Constraint>
BruteForceResult brute_force_1d(Cost&& cost, Constraint&& constraint, double lo, double hi,
                                double step) {
  require(step > 0.0 && lo <= hi, "brute_force_1d: invalid grid");
  const auto count = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  BruteForceResult out;
  auto visit = [&](double u) {
    if (constraint(u) < 0.0) return;
    const double v = cost(u);
    if (v < out.value) {
      out.value = v;
      out.argmin = u;
      out.feasible = true;
    }
  };
  for (std::int64_t k = 0; k < count; ++k) visit(lo + static_cast<double>(k) * step);
  visit(hi);
  return out;
}

/// Feasibility-only scan: true as soon as some grid point satisfies `constraint(u) >= 0`.
template <typename Constraint>
bool brute_force_feasible_1d(Constraint&& constraint, double lo, double hi, double step) {
  require(step > 0.0 && lo <= hi, "brute_force_feasible_1d: invalid grid");
  const auto count = static_cast<std::int64_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  for (std::int64_t k = 0; k < count; ++k) {
    if (constraint(lo + static_cast<double>(k) * step) >= 0.0) return true;
  }
  return constraint(hi) >= 0.0;
}

struct BruteForceMax {
  double argmax = 0.0;
  double value = -kInf;
};

/// Grid maximization of `f` on [lo, hi] at `coarse`, then repeated grids a
/// thousand times finer over the two cells around the best point until the
/// step reaches `fine`.
template <typename F>
BruteForceMax brute_force_max_1d(F&& f, double lo, double hi, double coarse, double fine) {
  require(coarse > 0.0 && fine > 0.0 && lo <= hi, "brute_force_max_1d: invalid grid");
  BruteForceMax out;
  auto scan = [&](double a, double b, double step) {
    const auto count = static_cast<std::int64_t>(std::floor((b - a) / step + 1e-9)) + 1;
    for (std::int64_t k = 0; k <= count; ++k) {
      const double u = k == count ? b : a + static_cast<double>(k) * step;
      const double v = f(u);
      if (v > out.value) {
        out.value = v;
        out.argmax = u;
      }
    }
  };
  scan(lo, hi, coarse);
  for (double step = coarse; step > fine;) {
    const double next = std::max(fine, step / 1000.0);
    const double c = out.argmax;
    scan(std::max(lo, c - step), std::min(hi, c + step), next);
    step = next;
  }
  return out;
}

}  // namespace mrcbf
