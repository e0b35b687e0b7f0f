#include "certiguard/conformal.hpp"

#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

namespace certiguard::conformal {

Bound Bound::finite(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("Bound::finite: non-finite value");
  Bound b;
  b.finite_ = true;
  b.value_ = v;
  return b;
}

double Bound::value() const {
  if (!finite_) throw std::logic_error("Bound::value: bound is unbounded");
  return value_;
}

Bound Bound::max(const Bound& a, const Bound& b) {
  if (!a.finite_ || !b.finite_) return unbounded();
  return finite(std::max(a.value_, b.value_));
}

std::ostream& operator<<(std::ostream& os, const Bound& b) {
  if (b.is_finite()) return os << b.value();
  return os << "inf";
}

QuantileRank quantile_index(std::size_t k, double alpha) {
  if (k == 0) throw std::invalid_argument("quantile_index: k must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("quantile_index: alpha must lie in (0, 1)");
  }
  const double level = static_cast<double>(k + 1) * (1.0 - alpha);
  auto r = static_cast<std::size_t>(std::ceil(level - 1e-12 * level));
  r = std::clamp<std::size_t>(r, 1, k + 1);
  return {r, k};
}

ScoreSet::ScoreSet(std::vector<double> scores, double alpha)
    : scores_(std::move(scores)), alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("ScoreSet: alpha must lie in (0, 1)");
  }
  for (double s : scores_) {
    if (!std::isfinite(s) || s < 0.0) {
      throw std::invalid_argument("ScoreSet: scores must be finite and nonnegative");
    }
  }
  std::stable_sort(scores_.begin(), scores_.end());
}

Bound conformal_bound(const ScoreSet& scores) {
  if (scores.size() == 0) throw std::invalid_argument("conformal_bound: empty score set");
  const auto r = quantile_index(scores.size(), scores.alpha());
  if (r.overflow()) return Bound::unbounded();
  return Bound::finite(scores.scores()[r.rank - 1]);
}

double empirical_coverage(const Bound& bound, std::span<const double> errors) {
  if (errors.empty()) throw std::invalid_argument("empirical_coverage: no errors");
  std::size_t covered = 0;
  for (double e : errors) covered += bound.covers(e) ? 1 : 0;
  return static_cast<double>(covered) / static_cast<double>(errors.size());
}

bool Box::contains(const Eigen::VectorXd& x, double tol) const {
  if (static_cast<std::size_t>(x.size()) != dim()) return false;
  for (std::size_t i = 0; i < dim(); ++i) {
    if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
  }
  return true;
}

Eigen::VectorXd Box::sample(Rng& rng) const {
  Eigen::VectorXd x(dim());
  for (std::size_t i = 0; i < dim(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
  return x;
}

Box Box::inflated(double fraction) const {
  Box b = *this;
  for (std::size_t i = 0; i < dim(); ++i) {
    const double pad = 0.5 * fraction * (hi[i] - lo[i]);
    b.lo[i] -= pad;
    b.hi[i] += pad;
  }
  return b;
}

Eigen::VectorXd Box::clamp(Eigen::VectorXd x) const {
  for (std::size_t i = 0; i < dim(); ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
  return x;
}

EpsNet build_eps_net(const Box& workspace, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("build_eps_net: epsilon must be > 0");
  const std::size_t n = workspace.dim();
  if (n == 0 || workspace.hi.size() != n) {
    throw std::invalid_argument("build_eps_net: malformed workspace");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(workspace.hi[i] > workspace.lo[i])) {
      throw std::invalid_argument("build_eps_net: degenerate workspace axis");
    }
  }
  const double max_spacing = 2.0 * epsilon / std::sqrt(static_cast<double>(n));
  std::vector<std::size_t> counts(n);
  std::vector<double> widths(n);
  EpsNet net;
  net.epsilon = epsilon;
  net.workspace = workspace;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double extent = workspace.hi[i] - workspace.lo[i];
    // Guard the ceiling against extent/spacing landing a hair above an integer.
    const double cells = extent / max_spacing;
    counts[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(cells - 1e-12 * cells)));
    widths[i] = extent / static_cast<double>(counts[i]);
    net.spacing = std::max(net.spacing, widths[i]);
    total *= counts[i];
  }
  net.points.reserve(total);
  std::vector<std::size_t> idx(n, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Eigen::VectorXd p(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = workspace.lo[i] + (static_cast<double>(idx[i]) + 0.5) * widths[i];
    }
    net.points.push_back(std::move(p));
    // Last axis varies fastest.
    for (std::size_t i = n; i-- > 0;) {
      if (++idx[i] < counts[i]) break;
      idx[i] = 0;
    }
  }
  return net;
}

double covering_distance(const EpsNet& net, const Eigen::VectorXd& x) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : net.points) best = std::min(best, (p - x).norm());
  return best;
}

std::size_t min_samples_for(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("min_samples_for: alpha must lie in (0, 1)");
  }
  std::size_t n = 1;
  while (quantile_index(n, alpha).overflow()) ++n;
  return n;
}

Bound combined_error_bound(const Bound& sup_bound, double lipschitz_product,
                           double epsilon) {
  return sup_bound.plus((lipschitz_product + 1.0) * epsilon);
}

CalibrationResult summarize(const CalibrationScores& scores, double alpha,
                            double lipschitz_product) {
  if (scores.samples_per_point < min_samples_for(alpha)) {
    throw std::invalid_argument("summarize: samples_per_point too small for alpha");
  }
  if (!(lipschitz_product >= 0.0)) {
    throw std::invalid_argument("summarize: lipschitz_product must be >= 0");
  }
  CalibrationResult r;
  r.alpha = alpha;
  r.epsilon = scores.net.epsilon;
  r.lipschitz_product = lipschitz_product;
  r.samples_per_point = scores.samples_per_point;
  r.per_point.reserve(scores.scores.size());
  Bound sup = Bound::finite(0.0);
  for (std::size_t j = 0; j < scores.scores.size(); ++j) {
    const Bound b = conformal_bound(ScoreSet(scores.scores[j], alpha));
    r.per_point.push_back({scores.net.points[j], b});
    sup = Bound::max(sup, b);
  }
  r.sup_bound = sup;
  r.combined_bound = combined_error_bound(sup, lipschitz_product, r.epsilon);
  return r;
}

nlohmann::json to_json(const Bound& b) {
  if (b.is_finite()) return b.value();
  return nullptr;
}

Bound bound_from_json(const nlohmann::json& j) {
  if (j.is_null()) return Bound::unbounded();
  return Bound::finite(j.get<double>());
}

nlohmann::json to_json(const CalibrationResult& r) {
  nlohmann::json per_point = nlohmann::json::array();
  for (const auto& pb : r.per_point) {
    per_point.push_back({{"x", std::vector<double>(pb.point.data(), pb.point.data() + pb.point.size())},
                         {"bound", to_json(pb.bound)}});
  }
  return {{"alpha", r.alpha},
          {"epsilon", r.epsilon},
          {"lipschitz_product", r.lipschitz_product},
          {"samples_per_point", r.samples_per_point},
          {"per_point", per_point},
          {"sup_bound", to_json(r.sup_bound)},
          {"combined_bound", to_json(r.combined_bound)}};
}

CalibrationResult calibration_from_json(const nlohmann::json& j) {
  CalibrationResult r;
  r.alpha = j.at("alpha").get<double>();
  r.epsilon = j.at("epsilon").get<double>();
  r.lipschitz_product = j.at("lipschitz_product").get<double>();
  r.samples_per_point = j.value("samples_per_point", std::size_t{0});
  for (const auto& pp : j.at("per_point")) {
    const auto xs = pp.at("x").get<std::vector<double>>();
    r.per_point.push_back({Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size())),
                           bound_from_json(pp.at("bound"))});
  }
  r.sup_bound = bound_from_json(j.at("sup_bound"));
  r.combined_bound = bound_from_json(j.at("combined_bound"));
  return r;
}

void write_score_histogram_csv(std::ostream& os, std::span<const double> scores,
                               double bin_width) {
  if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin width must be > 0");
  std::map<long long, std::size_t> bins;
  for (double s : scores) bins[static_cast<long long>(std::floor(s / bin_width))]++;
  os << "score,count\n";
  for (const auto& [b, c] : bins) {
    os << (static_cast<double>(b) + 0.5) * bin_width << ',' << c << '\n';
  }
}

}  // namespace certiguard::conformal
