#pragma once

#include "mrcbf/barrier.hpp"
#include "mrcbf/csv.hpp"
#include "mrcbf/robust_filter.hpp"
#include "mrcbf/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mrcbf {

using Metric = std::function<double(const Measurement&, const Measurement&)>;

inline Metric euclidean_metric() {
  return [](const Measurement& a, const Measurement& b) { return (a - b).norm(); };
}

/// Forward map p, its inverse q, and their smoothness constants w.r.t. `metric`.
struct MeasurementModel {
  int n = 0;
  int k = 0;
  std::function<Measurement(const State&)> forward;
  std::function<State(const Measurement&)> true_inverse;
  double lip_p = 0.0;
  double lip_q = 0.0;
  Metric metric = euclidean_metric();

  Measurement measure(const State& x) const {
    require_dim(x.size(), n, "MeasurementModel::measure");
    return forward(x);
  }
};

/// Each featured coordinate x_i becomes (gain_i x_i + offset_i, amp_i sin(freq_i x_i));
/// the remaining coordinates pass through unchanged, after the features.
struct SyntheticMapConfig {
  int n = 4;
  std::vector<int> featured{segway_index::r, segway_index::theta};
  Vector gain = Vector::Constant(2, 1.0);
  Vector offset = Vector::Constant(2, 0.1);
  Vector amplitude = Vector::Constant(2, 0.3);
  Vector frequency = Vector::Constant(2, 2.0);
  bool identity = false;
  /// Box on which lip_p and lip_q are estimated.
  Box lipschitz_box;
  double safety_factor = 1.2;

  void validate() const {
    require(n >= 1, "SyntheticMapConfig: n must be positive");
    if (identity) return;
    const auto f = static_cast<Eigen::Index>(featured.size());
    require(gain.size() == f && offset.size() == f && amplitude.size() == f && frequency.size() == f,
            "SyntheticMapConfig: one gain/offset/amplitude/frequency per featured coordinate");
    std::vector<int> seen;
    for (Eigen::Index j = 0; j < f; ++j) {
      const int i = featured[static_cast<std::size_t>(j)];
      require(i >= 0 && i < n, "SyntheticMapConfig: featured coordinate out of range");
      require(std::find(seen.begin(), seen.end(), i) == seen.end(),
              "SyntheticMapConfig: duplicate featured coordinate");
      seen.push_back(i);
      require(gain[j] > 0.0 && std::isfinite(gain[j]), "SyntheticMapConfig: gains must be positive");
      require(std::isfinite(offset[j]) && std::isfinite(amplitude[j]) && std::isfinite(frequency[j]),
              "SyntheticMapConfig: non-finite feature parameter");
    }
    require(safety_factor >= 1.0, "SyntheticMapConfig: safety factor must be >= 1");
  }

  static Box default_box(int n) {
    return Box(Vector::Constant(n, -1.0), Vector::Constant(n, 1.0), 21);
  }
};

namespace detail {

// Largest ratio ||q(y') - q(y)|| / rho(y', y) over axis-adjacent grid states.
inline double max_adjacent_inverse_slope(const Box& box, const MeasurementModel& model) {
  double best = 0.0;
  for_each_grid_point(box, [&](const Vector& x, const std::vector<int>& idx) {
    const Measurement y = model.forward(x);
    for (Eigen::Index i = 0; i < box.dim(); ++i) {
      if (idx[static_cast<std::size_t>(i)] + 1 >= box.points(i)) continue;
      Vector x2 = x;
      x2[i] = box.coordinate(i, idx[static_cast<std::size_t>(i)] + 1);
      const double rho = model.metric(y, model.forward(x2));
      if (rho > 0.0) best = std::max(best, (x2 - x).norm() / rho);
    }
  });
  return best;
}

}  // namespace detail

/// Injective smooth map with a closed-form inverse; lip_p and lip_q are grid estimates.
inline MeasurementModel synthetic_measurement_map(const SyntheticMapConfig& cfg = {}) {
  cfg.validate();
  MeasurementModel model;
  model.n = cfg.n;
  if (cfg.identity) {
    model.k = cfg.n;
    model.forward = [](const State& x) { return Measurement(x); };
    model.true_inverse = [](const Measurement& y) { return State(y); };
    model.lip_p = 1.0;
    model.lip_q = 1.0;
    return model;
  }
  const int n = cfg.n;
  const auto nf = static_cast<int>(cfg.featured.size());
  std::vector<int> passthrough;
  for (int i = 0; i < n; ++i) {
    if (std::find(cfg.featured.begin(), cfg.featured.end(), i) == cfg.featured.end()) passthrough.push_back(i);
  }
  model.k = 2 * nf + static_cast<int>(passthrough.size());
  const std::vector<int> featured = cfg.featured;
  const Vector gain = cfg.gain, offset = cfg.offset, amp = cfg.amplitude, freq = cfg.frequency;
  const int k = model.k;

  model.forward = [=](const State& x) {
    require_dim(x.size(), n, "synthetic map: state");
    Measurement y(k);
    for (int j = 0; j < nf; ++j) {
      const double xi = x[featured[static_cast<std::size_t>(j)]];
      y[2 * j] = gain[j] * xi + offset[j];
      y[2 * j + 1] = amp[j] * std::sin(freq[j] * xi);
    }
    for (std::size_t j = 0; j < passthrough.size(); ++j) y[2 * nf + static_cast<int>(j)] = x[passthrough[j]];
    return y;
  };
  model.true_inverse = [=](const Measurement& y) {
    require_dim(y.size(), k, "synthetic map: measurement");
    State x(n);
    for (int j = 0; j < nf; ++j) x[featured[static_cast<std::size_t>(j)]] = (y[2 * j] - offset[j]) / gain[j];
    for (std::size_t j = 0; j < passthrough.size(); ++j) x[passthrough[j]] = y[2 * nf + static_cast<int>(j)];
    return x;
  };

  const Box box = cfg.lipschitz_box.dim() == n ? cfg.lipschitz_box : SyntheticMapConfig::default_box(n);
  model.lip_p = cfg.safety_factor * max_adjacent_slope(box, [&](const State& x) { return model.forward(x); });
  model.lip_q = cfg.safety_factor * detail::max_adjacent_inverse_slope(box, model);
  return model;
}

/// Noisy supervised pairs (y_i, label_i = x_i + w_i) and the true x_i.
struct TrainingSet {
  std::vector<Measurement> y;
  std::vector<Vector> labels;
  std::vector<Vector> true_states;
  double noise_sigma = 0.0;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
  Eigen::Index measurement_dim() const { return y.empty() ? 0 : y.front().size(); }
  Eigen::Index label_dim() const { return labels.empty() ? 0 : labels.front().size(); }

  void validate() const {
    require(labels.size() == y.size(), "TrainingSet: label count mismatch");
    require(true_states.empty() || true_states.size() == y.size(), "TrainingSet: true-state count mismatch");
    require(noise_sigma >= 0.0, "TrainingSet: negative noise sigma");
    for (std::size_t i = 0; i < y.size(); ++i) {
      require_dim(y[i].size(), measurement_dim(), "TrainingSet: measurement");
      require_dim(labels[i].size(), label_dim(), "TrainingSet: label");
      if (!true_states.empty()) require_dim(true_states[i].size(), label_dim(), "TrainingSet: true state");
    }
  }
};

/// Labels x_i + w_i with w_i ~ N(0, sigma^2 I) drawn from `rng`; y_i = p(x_i).
template <typename Rng>
TrainingSet make_training_set(const MeasurementModel& model, const std::vector<State>& states, double sigma,
                              Rng& rng) {
  require(sigma >= 0.0, "make_training_set: negative sigma");
  std::normal_distribution<double> noise(0.0, 1.0);
  TrainingSet out;
  out.noise_sigma = sigma;
  out.y.reserve(states.size());
  out.labels.reserve(states.size());
  out.true_states = states;
  for (const auto& x : states) {
    out.y.push_back(model.measure(x));
    Vector w(x.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = sigma * noise(rng);
    out.labels.push_back(x + w);
  }
  return out;
}

/// Random split; the first set holds round(train_fraction * N) points.
template <typename Rng>
std::pair<TrainingSet, TrainingSet> train_test_split(const TrainingSet& data, double train_fraction, Rng& rng) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "train_test_split: fraction must be in (0, 1)");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(data.size())));
  std::pair<TrainingSet, TrainingSet> out;
  out.first.noise_sigma = out.second.noise_sigma = data.noise_sigma;
  for (std::size_t j = 0; j < order.size(); ++j) {
    TrainingSet& dst = j < n_train ? out.first : out.second;
    const std::size_t i = order[j];
    dst.y.push_back(data.y[i]);
    dst.labels.push_back(data.labels[i]);
    if (!data.true_states.empty()) dst.true_states.push_back(data.true_states[i]);
  }
  return out;
}

/// CSV with columns y0.., xbar0.. and, when present, x0..
inline void write_training_csv(std::ostream& os, const TrainingSet& data) {
  data.validate();
  std::vector<std::string> header;
  for (Eigen::Index i = 0; i < data.measurement_dim(); ++i) header.push_back("y" + std::to_string(i));
  for (Eigen::Index i = 0; i < data.label_dim(); ++i) header.push_back("xbar" + std::to_string(i));
  if (!data.true_states.empty()) {
    for (Eigen::Index i = 0; i < data.label_dim(); ++i) header.push_back("x" + std::to_string(i));
  }
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    bool first = true;
    auto put = [&](const Vector& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        os << (first ? "" : ",") << format_number(v[i]);
        first = false;
      }
    };
    put(data.y[r]);
    put(data.labels[r]);
    if (!data.true_states.empty()) put(data.true_states[r]);
    os << '\n';
  }
}

inline TrainingSet read_training_csv(std::istream& is, double noise_sigma = 0.0) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("read_training_csv: empty input");
  const auto header = split_csv_line(line);
  Eigen::Index ny = 0, nl = 0, nx = 0;
  for (const auto& h : header) {
    if (h.rfind("xbar", 0) == 0) {
      ++nl;
    } else if (h.rfind('y', 0) == 0) {
      ++ny;
    } else if (h.rfind('x', 0) == 0) {
      ++nx;
    } else {
      throw std::runtime_error("read_training_csv: unknown column '" + h + "'");
    }
  }
  require(ny > 0 && nl > 0, "read_training_csv: need y and xbar columns");
  require(nx == 0 || nx == nl, "read_training_csv: x columns must match xbar columns");
  TrainingSet out;
  out.noise_sigma = noise_sigma;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (static_cast<Eigen::Index>(cells.size()) != ny + nl + nx) {
      throw std::runtime_error("read_training_csv: wrong column count on line " + std::to_string(row));
    }
    Vector v(static_cast<Eigen::Index>(cells.size()));
    for (std::size_t i = 0; i < cells.size(); ++i) v[static_cast<Eigen::Index>(i)] = parse_number(cells[i]);
    out.y.push_back(v.head(ny));
    out.labels.push_back(v.segment(ny, nl));
    if (nx > 0) out.true_states.push_back(v.tail(nx));
  }
  out.validate();
  return out;
}

/// Thrown when a query has no training point within the kernel radius.
struct NoCoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NWPrediction {
  Vector value;
  std::size_t count = 0;  // s_N(y)
  bool fallback = false;
};

/// Nadaraya-Watson regressor with a ball kernel of radius `radius` under `metric`.
struct NWRegressor {
  TrainingSet training;
  double radius = 0.0;
  bool fallback = false;
  Metric metric = euclidean_metric();

  std::size_t coverage(const Measurement& y) const {
    std::size_t s = 0;
    for (const auto& yi : training.y) s += metric(yi, y) <= radius ? 1 : 0;
    return s;
  }

  NWPrediction predict_detailed(const Measurement& y) const {
    require_dim(y.size(), training.measurement_dim(), "NWRegressor: query");
    NWPrediction out;
    out.value = Vector::Zero(training.label_dim());
    double nearest = kInf;
    std::size_t nearest_index = 0;
    for (std::size_t i = 0; i < training.size(); ++i) {
      const double d = metric(training.y[i], y);
      if (d <= radius) {
        out.value += training.labels[i];
        ++out.count;
      }
      if (d < nearest) {
        nearest = d;
        nearest_index = i;
      }
    }
    if (out.count > 0) {
      out.value /= static_cast<double>(out.count);
      return out;
    }
    if (!fallback) throw NoCoverageError("NWRegressor: no training point within the kernel radius");
    out.value = training.labels[nearest_index];
    out.fallback = true;
    return out;
  }

  Vector predict(const Measurement& y) const { return predict_detailed(y).value; }
  Vector operator()(const Measurement& y) const { return predict(y); }
};

inline NWRegressor nw_fit(TrainingSet data, double radius, bool fallback = false, Metric metric = euclidean_metric()) {
  require(!data.empty(), "nw_fit: empty training set");
  require(radius > 0.0 && std::isfinite(radius), "nw_fit: radius must be positive");
  data.validate();
  return NWRegressor{std::move(data), radius, fallback, std::move(metric)};
}

/// Mean Euclidean label error of a fit on `train` evaluated on `test` (true states when present).
inline double validation_error(const TrainingSet& train, const TrainingSet& test, double radius) {
  const NWRegressor reg = nw_fit(train, radius, true);
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const Vector& target = test.true_states.empty() ? test.labels[i] : test.true_states[i];
    total += (reg.predict(test.y[i]) - target).norm();
  }
  return test.empty() ? 0.0 : total / static_cast<double>(test.size());
}

/// Radius with the smallest validation error on a fixed train/test split.
template <typename Rng>
double select_radius(const TrainingSet& data, const std::vector<double>& candidates, double train_fraction,
                     Rng& rng) {
  require(!candidates.empty(), "select_radius: no candidates");
  const auto [train, test] = train_test_split(data, train_fraction, rng);
  double best_r = candidates.front();
  double best_err = kInf;
  for (double r : candidates) {
    const double err = validation_error(train, test, r);
    if (err < best_err) {
      best_err = err;
      best_r = r;
    }
  }
  return best_r;
}

/// Parameters (L, sigma) and hyperparameter gamma of the nonparametric error bound.
struct NonparametricBound {
  double L = 0.0;
  double sigma = 0.0;
  double gamma = 0.0;

  void validate() const {
    require(L >= 0.0 && sigma >= 0.0 && gamma >= 0.0 && std::isfinite(L) && std::isfinite(sigma) &&
                std::isfinite(gamma),
            "NonparametricBound: parameters must be finite and nonnegative");
  }

  double evaluate(std::size_t count) const {
    if (count == 0) return kInf;
    return L * gamma + sigma / std::sqrt(static_cast<double>(count));
  }

  /// L = Lp Lq, sigma = n sw sqrt(n log(n sqrt(N) / delta)), gamma = radius / Lp.
  static NonparametricBound from_nw(const MeasurementModel& model, double radius, int n, double sigma_w,
                                    std::size_t N, double delta) {
    require(model.lip_p > 0.0, "NonparametricBound::from_nw: lip_p must be positive");
    require(delta > 0.0 && delta < 1.0, "NonparametricBound::from_nw: delta must be in (0, 1)");
    require(N >= 1 && n >= 1, "NonparametricBound::from_nw: empty data");
    const double nd = static_cast<double>(n);
    const double log_arg = nd * std::sqrt(static_cast<double>(N)) / delta;
    return {model.lip_p * model.lip_q, nd * sigma_w * std::sqrt(nd * std::log(log_arg)), radius / model.lip_p};
  }
};

/// Counts points within a Euclidean radius using a uniform hash grid of that cell size.
class BallCounter {
 public:
  BallCounter(std::vector<Vector> points, double radius) : points_(std::move(points)), radius_(radius) {
    require(radius > 0.0, "BallCounter: radius must be positive");
    for (std::size_t i = 0; i < points_.size(); ++i) cells_[cell_of(points_[i])].push_back(i);
  }

  std::size_t count(const Vector& x) const {
    if (points_.empty()) return 0;
    require_dim(x.size(), points_.front().size(), "BallCounter: query");
    const auto base = cell_of(x);
    std::size_t total = 0;
    std::vector<std::int64_t> key(base.size());
    const auto d = base.size();
    std::size_t combos = 1;
    for (std::size_t i = 0; i < d; ++i) combos *= 3;
    for (std::size_t c = 0; c < combos; ++c) {
      std::size_t rem = c;
      for (std::size_t i = 0; i < d; ++i) {
        key[i] = base[i] + static_cast<std::int64_t>(rem % 3) - 1;
        rem /= 3;
      }
      const auto it = cells_.find(key);
      if (it == cells_.end()) continue;
      for (std::size_t j : it->second) total += (points_[j] - x).norm() <= radius_ ? 1 : 0;
    }
    return total;
  }

  const std::vector<Vector>& points() const { return points_; }

 private:
  std::vector<std::int64_t> cell_of(const Vector& x) const {
    std::vector<std::int64_t> key(static_cast<std::size_t>(x.size()));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      key[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(std::floor(x[i] / radius_));
    }
    return key;
  }

  std::vector<Vector> points_;
  double radius_;
  std::map<std::vector<std::int64_t>, std::vector<std::size_t>> cells_;
};

/// L gamma + sigma / sqrt(#{x_i : ||x - x_i|| <= gamma}); +inf for an empty ball.
inline double nonparam_error_bound(const NonparametricBound& bound, const std::vector<Vector>& true_states,
                                   const State& x) {
  bound.validate();
  std::size_t count = 0;
  for (const auto& xi : true_states) count += (x - xi).norm() <= bound.gamma ? 1 : 0;
  return bound.evaluate(count);
}

inline double nonparam_error_bound(const NonparametricBound& bound, const TrainingSet& data, const State& x) {
  require(!data.true_states.empty(), "nonparam_error_bound: training set has no true states");
  return nonparam_error_bound(bound, data.true_states, x);
}

/// alpha Lq + (n sw / sqrt(s)) sqrt(n log(n sqrt(s) / delta)).
inline double lemma4_rhs(double radius, double lip_q, std::size_t s, double delta, int n, double sigma_w) {
  require(delta > 0.0 && delta < 1.0, "lemma4_bound: delta must be in (0, 1)");
  require(n >= 1 && sigma_w >= 0.0, "lemma4_bound: bad dimension or noise level");
  if (s == 0) throw NoCoverageError("lemma4_bound: s_N(y) = 0");
  const double nd = static_cast<double>(n);
  const double sq = std::sqrt(static_cast<double>(s));
  return radius * lip_q + nd * sigma_w / sq * std::sqrt(nd * std::log(nd * sq / delta));
}

/// High-probability bound on ||q_hat(y) - q(y)||_inf at a fixed y, with the kernel radius as alpha.
inline double lemma4_bound(const NWRegressor& reg, const MeasurementModel& model, const Measurement& y,
                           double delta, int n, double sigma_w) {
  return lemma4_rhs(reg.radius, model.lip_q, reg.coverage(y), delta, n, sigma_w);
}

/// max{ ||Lgh|| / L_Lgh, (Lfh + alpha(h)) / (L_Lfh + L_alpha_h) }, i.e. twice eps_bar.
inline double density_margin(const BarrierFunction& bf, const ControlAffineSystem& sys, const State& x,
                             const LipschitzBundle& lips) {
  return 2.0 * eps_bar(bf, sys, x, lips);
}

/// Count of training states per gamma-ball that the density condition requires
/// to exceed at x: 4 sigma^2 / (max-term - 2 L gamma)^2, +inf when the
/// denominator is not positive.
inline double corollary1_required_count(const BarrierFunction& bf, const ControlAffineSystem& sys, const State& x,
                                        const LipschitzBundle& lips, const NonparametricBound& bound) {
  bound.validate();
  const double den = density_margin(bf, sys, x, lips) - 2.0 * bound.L * bound.gamma;
  if (!(den > 0.0)) return kInf;
  return 4.0 * bound.sigma * bound.sigma / (den * den);
}

inline double corollary1_required_count(const std::vector<RobustBarrier>& barriers, const ControlAffineSystem& sys,
                                        const State& x, const NonparametricBound& bound) {
  double req = 0.0;
  for (const auto& rb : barriers) req = std::max(req, corollary1_required_count(rb.barrier, sys, x, rb.lips, bound));
  return req;
}

/// Smallest integer count strictly above a required count.
inline std::size_t strict_count(double required) {
  require(std::isfinite(required), "strict_count: infinite requirement");
  return static_cast<std::size_t>(std::floor(required)) + 1;
}

struct GridSamplerConfig {
  /// Sampled states; degenerate axes stay fixed.
  Box box;
  /// Multiplier on the requirement sampled at cell corners.
  double requirement_margin = 1.25;
  std::uint64_t seed = 1;
};

struct GridSamplerResult {
  std::vector<State> states;
  /// Grid nodes whose cell meets the safe set but has an infinite requirement.
  std::vector<State> unbounded_regions;
  std::size_t nodes = 0;
};

/// Grid at pitch gamma / sqrt(d) over the active axes of the box, plus jittered
/// copies within gamma / 2 of each node until every gamma-ball centred in the
/// node's cell holds more than the largest requirement seen at the cell's centre
/// and corners. Cells entirely outside the safe set are skipped.
inline GridSamplerResult grid_sampler(const GridSamplerConfig& cfg, const std::vector<RobustBarrier>& barriers,
                                      const ControlAffineSystem& sys, const NonparametricBound& bound) {
  bound.validate();
  cfg.box.validate();
  require(bound.gamma > 0.0, "grid_sampler: gamma must be positive");
  require(!barriers.empty(), "grid_sampler: no barriers");
  require_dim(cfg.box.dim(), sys.n, "grid_sampler: box");
  const int d = cfg.box.active_dims();
  require(d >= 1, "grid_sampler: box has no active axis");
  const double pitch = bound.gamma / std::sqrt(static_cast<double>(d));

  std::vector<int> res(static_cast<std::size_t>(cfg.box.dim()), 1);
  for (Eigen::Index i = 0; i < cfg.box.dim(); ++i) {
    if (cfg.box.degenerate(i)) continue;
    res[static_cast<std::size_t>(i)] =
        static_cast<int>(std::ceil((cfg.box.upper[i] - cfg.box.lower[i]) / pitch)) + 1;
  }
  const Box grid(cfg.box.lower, cfg.box.upper, res);
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < grid.dim(); ++i) {
    if (!grid.degenerate(i)) active.push_back(i);
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01;
  auto jitter = [&](const State& node) {
    // Uniform in the active-axis ball of radius gamma / 2.
    Vector dir(static_cast<Eigen::Index>(active.size()));
    for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = n01(rng);
    const double rad = 0.5 * bound.gamma * std::pow(u01(rng), 1.0 / static_cast<double>(active.size()));
    State x = node;
    const double nrm = dir.norm();
    for (std::size_t j = 0; j < active.size(); ++j) {
      x[active[j]] += nrm > 0.0 ? rad * dir[static_cast<Eigen::Index>(j)] / nrm : 0.0;
    }
    return x;
  };

  GridSamplerResult out;
  const std::size_t corners = std::size_t{1} << active.size();
  for_each_grid_point(grid, [&](const Vector& node, const std::vector<int>&) {
    ++out.nodes;
    double req = corollary1_required_count(barriers, sys, node, bound);
    bool meets_safe_set = boolean_composition(
                              [&] {
                                std::vector<double> v;
                                for (const auto& rb : barriers) v.push_back(rb.barrier.value(node));
                                return v;
                              }()) >= 0.0;
    for (std::size_t c = 0; c < corners; ++c) {
      State x = node;
      for (std::size_t j = 0; j < active.size(); ++j) x[active[j]] += ((c >> j) & 1u ? 0.5 : -0.5) * pitch;
      double hb = kInf;
      for (const auto& rb : barriers) hb = std::min(hb, rb.barrier.value(x));
      if (hb < 0.0) continue;
      meets_safe_set = true;
      req = std::max(req, corollary1_required_count(barriers, sys, x, bound));
    }
    if (!meets_safe_set) return;
    if (!std::isfinite(req)) {
      out.unbounded_regions.push_back(node);
      out.states.push_back(node);
      return;
    }
    const std::size_t need = strict_count(cfg.requirement_margin * req);
    out.states.push_back(node);
    for (std::size_t i = 1; i < need; ++i) out.states.push_back(jitter(node));
  });
  return out;
}

struct Corollary1Audit {
  std::size_t points = 0;
  std::size_t count_failures = 0;
  std::size_t bound_failures = 0;
  double worst_ratio = 0.0;  // max of bound / eps_bar over audited points
};

/// Checks the density condition and the bound against eps_bar at `samples`
/// random states of the box that lie strictly inside the safe set.
inline Corollary1Audit corollary1_audit(const std::vector<State>& training_states, const Box& box,
                                        const std::vector<RobustBarrier>& barriers, const ControlAffineSystem& sys,
                                        const NonparametricBound& bound, std::size_t samples, std::uint64_t seed) {
  const BallCounter counter(training_states, bound.gamma);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01;
  Corollary1Audit out;
  std::size_t attempts = 0;
  while (out.points < samples) {
    require(++attempts < 1000 * samples + 1000, "corollary1_audit: box barely intersects the safe set");
    State x(box.dim());
    for (Eigen::Index i = 0; i < box.dim(); ++i) x[i] = box.lower[i] + (box.upper[i] - box.lower[i]) * u01(rng);
    double hb = kInf;
    for (const auto& rb : barriers) hb = std::min(hb, rb.barrier.value(x));
    if (!(hb > 0.0)) continue;
    ++out.points;
    const std::size_t count = counter.count(x);
    const double req = corollary1_required_count(barriers, sys, x, bound);
    if (!(static_cast<double>(count) > req)) ++out.count_failures;
    const double b = bound.evaluate(count);
    double eb = kInf;
    for (const auto& rb : barriers) eb = std::min(eb, eps_bar(rb.barrier, sys, x, rb.lips));
    if (!(b < eb)) ++out.bound_failures;
    out.worst_ratio = std::max(out.worst_ratio, b / eb);
  }
  return out;
}

}  // namespace mrcbf
