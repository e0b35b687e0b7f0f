#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

ScanMatcher::ScanMatcher(world::Environment env, conformal::Box search_box, ScanMatcherOptions opts)
    : PerceptionMap(std::move(search_box)), env_(std::move(env)), opts_(opts) {
  const auto& box = clamp_box();
  if (box.dim() != 2) throw std::invalid_argument("ScanMatcher: search box must be 2-D");
  if (!(opts_.coarse_step > 0.0) || !(opts_.initial_step > 0.0) || !(opts_.final_step > 0.0)) {
    throw std::invalid_argument("ScanMatcher: step sizes must be > 0");
  }
  if (opts_.angle_bins < 8) throw std::invalid_argument("ScanMatcher: angle_bins must be >= 8");
  if (opts_.candidates == 0) throw std::invalid_argument("ScanMatcher: candidates must be >= 1");
  if (!(opts_.candidate_separation >= 0.0)) {
    throw std::invalid_argument("ScanMatcher: candidate_separation must be >= 0");
  }
  if (!(opts_.temperature > 0.0) || !(opts_.posterior_half_width > 0.0)) {
    throw std::invalid_argument("ScanMatcher: temperature and posterior half-width must be > 0");
  }
  if (!(opts_.negative_weight >= 1.0) || !(opts_.coarse_negative_weight >= 1.0)) {
    throw std::invalid_argument("ScanMatcher: negative_weight must be >= 1");
  }
  std::array<std::size_t, 2> counts{};
  for (std::size_t a = 0; a < 2; ++a) {
    const double extent = box.hi[a] - box.lo[a];
    counts[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(extent / opts_.coarse_step)));
  }
  for (std::size_t i = 0; i < counts[0]; ++i) {
    for (std::size_t j = 0; j < counts[1]; ++j) {
      const double x = box.lo[0] + (static_cast<double>(i) + 0.5) * (box.hi[0] - box.lo[0]) / static_cast<double>(counts[0]);
      const double y = box.lo[1] + (static_cast<double>(j) + 0.5) * (box.hi[1] - box.lo[1]) / static_cast<double>(counts[1]);
      grid_.emplace_back(x, y);
    }
  }
  const std::size_t bins = opts_.angle_bins;
  std::vector<Eigen::Vector2d> dirs(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const double a = 2.0 * M_PI * static_cast<double>(b) / static_cast<double>(bins);
    dirs[b] = {std::cos(a), std::sin(a)};
  }
  auto table = std::make_shared<std::vector<float>>(grid_.size() * bins);
  std::vector<double> ranges(bins);
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    world::cast_ranges(env_, grid_[i], dirs, ranges);
    std::copy(ranges.begin(), ranges.end(), table->begin() + static_cast<std::ptrdiff_t>(i * bins));
  }
  table_ = std::move(table);
  all_rays_.resize(world::kNumRays);
  std::iota(all_rays_.begin(), all_rays_.end(), 0);
}

double ScanMatcher::cost_on(const Eigen::Vector2d& p, const world::Scan& scan,
                            std::span<const Eigen::Vector2d> dirs,
                            std::span<const std::size_t> rays,
                            double negative_weight) const {
  std::array<double, world::kNumRays> predicted{};
  world::cast_ranges(env_, p, dirs, std::span<double>(predicted.data(), dirs.size()));
  double c = 0.0;
  for (std::size_t k = 0; k < rays.size(); ++k) {
    const double r = scan.ranges[rays[k]] - predicted[k];
    c += r >= 0.0 ? r : -negative_weight * r;
  }
  return c;
}

double ScanMatcher::cost(const Eigen::Vector2d& p, const world::Scan& scan) const {
  const auto dirs = world::ray_directions(scan.heading);
  return cost_on(p, scan, dirs, all_rays_, opts_.negative_weight);
}

world::VehicleState ScanMatcher::raw_estimate(const world::Scan& scan) const {
  const auto all_dirs = world::ray_directions(scan.heading);
  const std::size_t bins = opts_.angle_bins;
  const double per_bin = static_cast<double>(bins) / (2.0 * M_PI);
  std::array<std::size_t, world::kNumRays> bin{};
  const auto& angles = world::scan_angles();
  for (std::size_t k = 0; k < world::kNumRays; ++k) {
    double a = std::fmod(scan.heading + angles[k], 2.0 * M_PI);
    if (a < 0.0) a += 2.0 * M_PI;
    bin[k] = static_cast<std::size_t>(std::lround(a * per_bin)) % bins;
  }
  const std::vector<float>& table = *table_;
  const double kappa = opts_.coarse_negative_weight;
  std::vector<std::pair<double, std::size_t>> scored(grid_.size());
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    const float* row = table.data() + i * bins;
    double c = 0.0;
    for (std::size_t k = 0; k < world::kNumRays; ++k) {
      const double r = scan.ranges[k] - static_cast<double>(row[bin[k]]);
      c += r >= 0.0 ? r : -kappa * r;
    }
    scored[i] = {c, i};
  }
  std::sort(scored.begin(), scored.end());
  // Greedy suppression: the seeds are the best cells at least
  // candidate_separation apart, so they do not all fall into one basin.
  std::vector<std::size_t> seeds;
  const double sep2 = opts_.candidate_separation * opts_.candidate_separation;
  for (const auto& [c, i] : scored) {
    if (seeds.size() >= opts_.candidates) break;
    const bool far = std::all_of(seeds.begin(), seeds.end(), [&](std::size_t s) {
      return (grid_[s] - grid_[i]).squaredNorm() >= sep2;
    });
    if (far) seeds.push_back(i);
  }

  const auto& box = clamp_box();
  Eigen::Vector2d best_p = grid_[seeds.front()];
  double best_c = std::numeric_limits<double>::infinity();
  static constexpr std::array<std::array<double, 2>, 4> kMoves{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  for (std::size_t seed : seeds) {
    Eigen::Vector2d p = grid_[seed];
    double pc = cost_on(p, scan, all_dirs, all_rays_, opts_.negative_weight);
    double step = opts_.initial_step;
    while (step >= opts_.final_step) {
      Eigen::Vector2d next = p;
      double next_c = pc;
      for (const auto& m : kMoves) {
        Eigen::Vector2d q(p.x() + step * m[0], p.y() + step * m[1]);
        q = box.clamp(q);
        const double qc = cost_on(q, scan, all_dirs, all_rays_, opts_.negative_weight);
        if (qc < next_c) {
          next_c = qc;
          next = q;
        }
      }
      if (next_c < pc) {
        p = next;
        pc = next_c;
      } else {
        step *= 0.5;
      }
    }
    if (pc < best_c) {
      best_c = pc;
      best_p = p;
    }
  }
  if (opts_.posterior_steps == 0) return {best_p.x(), best_p.y(), scan.heading};

  const auto k = static_cast<int>(opts_.posterior_steps);
  const double h = opts_.posterior_half_width / static_cast<double>(k);
  Eigen::Vector2d acc = Eigen::Vector2d::Zero();
  double total = 0.0;
  for (int a = -k; a <= k; ++a) {
    for (int b = -k; b <= k; ++b) {
      const Eigen::Vector2d q = best_p + h * Eigen::Vector2d(a, b);
      const double w = std::exp(-(cost_on(q, scan, all_dirs, all_rays_, opts_.negative_weight) - best_c) / opts_.temperature);
      acc += w * q;
      total += w;
    }
  }
  // The centre term alone contributes weight 1, so total >= 1.
  const Eigen::Vector2d p = acc / total;
  return {p.x(), p.y(), scan.heading};
}

nlohmann::json ScanMatcher::descriptor() const {
  return {{"kind", kind()},
          {"coarse_step", opts_.coarse_step},
          {"angle_bins", opts_.angle_bins},
          {"candidates", opts_.candidates},
          {"candidate_separation", opts_.candidate_separation},
          {"initial_step", opts_.initial_step},
          {"final_step", opts_.final_step},
          {"negative_weight", opts_.negative_weight},
          {"coarse_negative_weight", opts_.coarse_negative_weight},
          {"posterior_steps", opts_.posterior_steps},
          {"posterior_half_width", opts_.posterior_half_width},
          {"temperature", opts_.temperature}};
}

nlohmann::json ScanMatcher::to_json() const {
  auto j = descriptor();
  const auto& box = clamp_box();
  j["clamp_box"] = {box.lo[0], box.hi[0], box.lo[1], box.hi[1]};
  j["environment"] = world::to_json(env_);
  return j;
}

std::unique_ptr<ScanMatcher> fit_scan_matcher(const DataSet& train, const world::Environment& env,
                                              conformal::Box search_box, ScanMatcherOptions opts,
                                              const std::vector<double>& candidates,
                                              std::size_t jobs) {
  if (train.pairs.empty()) throw std::invalid_argument("fit_scan_matcher: empty training set");
  if (candidates.empty()) throw std::invalid_argument("fit_scan_matcher: no candidate temperatures");
  double best_err = std::numeric_limits<double>::infinity();
  double best_t = candidates.front();
  for (double t : candidates) {
    opts.temperature = t;
    const ScanMatcher m(env, search_box, opts);
    std::vector<double> sq(train.pairs.size());
    parallel_for(train.pairs.size(), jobs, [&](std::size_t i) {
      const auto& s = train.pairs[i];
      sq[i] = (m.estimate_position(s.scan) - s.state.position()).squaredNorm();
    });
    const double mse = std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(sq.size());
    if (mse < best_err) {
      best_err = mse;
      best_t = t;
    }
  }
  opts.temperature = best_t;
  return std::make_unique<ScanMatcher>(env, std::move(search_box), opts);
}

}  // namespace certiguard::perception
