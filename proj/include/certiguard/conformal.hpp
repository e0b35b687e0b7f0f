#pragma once

// Split-conformal calibration of perception error bounds over a gridded
// workspace.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <nlohmann/json.hpp>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "certiguard/parallel.hpp"
#include "certiguard/rng.hpp"

namespace certiguard::conformal {

/// A real upper bound that may be unbounded.
///
/// Unboundedness is carried as state, not as an IEEE infinity, so arithmetic
/// on bounds always has to go through these members.
class Bound {
 public:
  static Bound finite(double v);
  static Bound unbounded() { return Bound(); }

  bool is_finite() const { return finite_; }
  /// Throws std::logic_error when the bound is unbounded.
  double value() const;
  /// True when `e` lies within the bound.
  bool covers(double e) const { return !finite_ || e <= value_; }

  /// this + s, still unbounded if this is.
  Bound plus(double s) const { return finite_ ? finite(value_ + s) : unbounded(); }

  /// Largest of the two; unbounded dominates.
  static Bound max(const Bound& a, const Bound& b);

  /// `v` as a double, +inf when unbounded. For reporting only.
  double as_double() const {
    return finite_ ? value_ : std::numeric_limits<double>::infinity();
  }

  friend bool operator==(const Bound&, const Bound&) = default;

 private:
  Bound() = default;
  bool finite_ = false;
  double value_ = 0.0;
};

std::ostream& operator<<(std::ostream& os, const Bound& b);

/// 1-indexed order-statistic rank for a conformal quantile.
struct QuantileRank {
  std::size_t rank = 0;          // r, always in [1, k+1]
  std::size_t sample_count = 0;  // k
  bool overflow() const { return rank > sample_count; }
};

/// r = ceil((k+1)(1-alpha)).
///
/// The product is reduced by a relative 1e-12 before the ceiling so that
/// values that are integral in exact arithmetic are not bumped up by
/// binary rounding of alpha.
QuantileRank quantile_index(std::size_t k, double alpha);

/// Nonconformity scores at one failure level, kept sorted non-decreasing.
class ScoreSet {
 public:
  ScoreSet(std::vector<double> scores, double alpha);

  std::span<const double> scores() const { return scores_; }
  double alpha() const { return alpha_; }
  std::size_t size() const { return scores_.size(); }

 private:
  std::vector<double> scores_;
  double alpha_;
};

/// Z^(r) for r from quantile_index, or unbounded when r > k.
Bound conformal_bound(const ScoreSet& scores);

/// Fraction of `errors` covered by `bound`. `errors` must be nonempty.
double empirical_coverage(const Bound& bound, std::span<const double> errors);

/// Axis-aligned box of arbitrary dimension.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const { return lo.size(); }
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  /// Uniform sample inside the box.
  Eigen::VectorXd sample(Rng& rng) const;
  /// Box grown about its center by `fraction` of its extent on each axis.
  Box inflated(double fraction) const;
  Eigen::VectorXd clamp(Eigen::VectorXd x) const;
};

struct EpsNet {
  std::vector<Eigen::VectorXd> points;
  double epsilon = 0.0;
  double spacing = 0.0;  // largest per-axis cell width actually used
  Box workspace;
};

/// Cell-centred uniform grid. Per-axis spacing is at most 2*epsilon/sqrt(n),
/// which puts every workspace point within epsilon of a grid point.
EpsNet build_eps_net(const Box& workspace, double epsilon);

/// Distance from x to its nearest net point.
double covering_distance(const EpsNet& net, const Eigen::VectorXd& x);

struct PointBound {
  Eigen::VectorXd point;
  Bound bound;
};

/// Outcome of calibrating a perception map over an eps-net.
struct CalibrationResult {
  std::vector<PointBound> per_point;
  Bound sup_bound = Bound::unbounded();
  double lipschitz_product = 0.0;
  double epsilon = 0.0;
  Bound combined_bound = Bound::unbounded();
  double alpha = 0.0;
  std::size_t samples_per_point = 0;
};

/// Raw per-point scores, retained so a single calibration sweep can be
/// summarized at several failure levels.
struct CalibrationScores {
  EpsNet net;
  std::vector<std::vector<double>> scores;  // scores[j] sorted non-decreasing
  std::size_t samples_per_point = 0;
};

/// Smallest N with N >= ceil((N+1)(1-alpha)).
std::size_t min_samples_for(double alpha);

/// Builds a CalibrationResult from already-computed per-point scores.
/// Throws std::invalid_argument if N is too small for alpha.
CalibrationResult summarize(const CalibrationScores& scores, double alpha,
                            double lipschitz_product);

/// Combine a per-point sup bound with the covering slack:
/// sup + (L + 1) * epsilon.
Bound combined_error_bound(const Bound& sup_bound, double lipschitz_product,
                           double epsilon);

struct CalibrationOptions {
  std::size_t samples_per_point = 0;
  double alpha = 0.25;
  double lipschitz_product = 0.0;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Draws N measurements at every net point and scores the perception map.
///
/// `sampler(point, rng)` returns a measurement taken at `point`;
/// `perception(measurement)` returns an estimate in the coordinates of the
/// net. Each grid point j owns the stream derive_seed(seed, j).
template <class Sampler, class Perception>
CalibrationScores calibrate_scores(const EpsNet& net, Sampler&& sampler,
                                   Perception&& perception,
                                   std::size_t samples_per_point,
                                   std::uint64_t seed, std::size_t jobs = 1) {
  CalibrationScores out;
  out.net = net;
  out.samples_per_point = samples_per_point;
  out.scores.resize(net.points.size());
  parallel_for(net.points.size(), jobs, [&](std::size_t j) {
    Rng rng(derive_seed(seed, j));
    const Eigen::VectorXd& xj = net.points[j];
    std::vector<double> z;
    z.reserve(samples_per_point);
    for (std::size_t i = 0; i < samples_per_point; ++i) {
      const auto y = sampler(xj, rng);
      const Eigen::VectorXd xhat = perception(y);
      z.push_back((xhat - xj).norm());
    }
    std::stable_sort(z.begin(), z.end());
    out.scores[j] = std::move(z);
  });
  return out;
}

template <class Sampler, class Perception>
CalibrationResult calibrate(const EpsNet& net, Sampler&& sampler,
                            Perception&& perception,
                            const CalibrationOptions& opts) {
  if (opts.samples_per_point < min_samples_for(opts.alpha)) {
    throw std::invalid_argument(
        "calibrate: samples_per_point " + std::to_string(opts.samples_per_point) +
        " is below ceil((N+1)(1-alpha)); per-point bounds would be unbounded");
  }
  const auto scores = calibrate_scores(net, sampler, perception,
                                       opts.samples_per_point, opts.seed, opts.jobs);
  return summarize(scores, opts.alpha, opts.lipschitz_product);
}

nlohmann::json to_json(const Bound& b);
Bound bound_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CalibrationResult& r);
CalibrationResult calibration_from_json(const nlohmann::json& j);

/// Writes `score,count` rows, one per bin of width `bin_width`; score is the
/// bin centre.
void write_score_histogram_csv(std::ostream& os, std::span<const double> scores,
                               double bin_width);

}  // namespace certiguard::conformal
