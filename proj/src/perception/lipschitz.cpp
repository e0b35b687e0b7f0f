#include <algorithm>
#include <cmath>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

namespace {
constexpr int kMaxRedraws = 64;
}  // namespace

LipschitzEstimate estimate_lipschitz(const PairedMap& f, const conformal::Box& domain,
                                     std::size_t num_pairs, std::uint64_t seed, double radius,
                                     double safety_factor, std::size_t jobs,
                                     double quantile_level) {
  if (num_pairs == 0) throw std::invalid_argument("estimate_lipschitz: num_pairs must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("estimate_lipschitz: radius must be > 0");
  if (!(safety_factor >= 1.0)) throw std::invalid_argument("estimate_lipschitz: safety factor must be >= 1");
  if (!(quantile_level > 0.0 && quantile_level <= 1.0)) {
    throw std::invalid_argument("estimate_lipschitz: quantile level must lie in (0, 1]");
  }
  const std::size_t n = domain.dim();
  std::vector<double> ratios(num_pairs, -1.0);
  parallel_for(num_pairs, jobs, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    const Eigen::VectorXd a = domain.sample(rng);
    Eigen::VectorXd b = a;
    if (i % 2 == 0) {
      b = domain.sample(rng);
    } else {
      // Perturbations leaving the domain are redrawn; clamping would pile
      // points onto the boundary, where the map need not be defined.
      for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        Eigen::VectorXd dir(static_cast<Eigen::Index>(n));
        for (auto& d : dir) d = rng.normal();
        const double norm = dir.norm();
        if (norm == 0.0) continue;
        const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(n));
        b = a + r * dir / norm;
        if (domain.contains(b)) break;
      }
      if (!domain.contains(b)) b = domain.clamp(b);
    }
    const double dist = (a - b).norm();
    if (!(dist > 0.0)) return;
    const std::uint64_t pair_seed = rng.next_u64();
    ratios[i] = (f(a, pair_seed) - f(b, pair_seed)).norm() / dist;
  });
  LipschitzEstimate est;
  est.radius = radius;
  est.safety_factor = safety_factor;
  std::vector<double> used;
  used.reserve(ratios.size());
  for (double r : ratios) {
    if (r >= 0.0) used.push_back(r);
  }
  if (used.empty()) throw std::invalid_argument("estimate_lipschitz: every sampled pair was degenerate");
  std::sort(used.begin(), used.end());
  est.samples_used = used.size();
  est.max_ratio = used.back();
  est.value = est.max_ratio * safety_factor;
  est.quantile_level = quantile_level;
  const auto rank = static_cast<std::size_t>(
      std::ceil(quantile_level * static_cast<double>(used.size()) - 1e-12));
  est.quantile_ratio = used[std::clamp<std::size_t>(rank, 1, used.size()) - 1];
  return est;
}

LipschitzEstimate estimate_lipschitz(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                     const conformal::Box& domain, std::size_t num_pairs,
                                     std::uint64_t seed, double radius, double safety_factor) {
  return estimate_lipschitz([&f](const Eigen::VectorXd& x, std::uint64_t) { return f(x); }, domain,
                            num_pairs, seed, radius, safety_factor, 1);
}

nlohmann::json to_json(const LipschitzEstimate& e) {
  return {{"value", e.value},
          {"max_ratio", e.max_ratio},
          {"samples_used", e.samples_used},
          {"radius", e.radius},
          {"safety_factor", e.safety_factor},
          {"quantile_level", e.quantile_level},
          {"quantile_ratio", e.quantile_ratio}};
}

LipschitzEstimate lipschitz_from_json(const nlohmann::json& j) {
  LipschitzEstimate e;
  e.value = j.at("value").get<double>();
  e.max_ratio = j.at("max_ratio").get<double>();
  e.samples_used = j.at("samples_used").get<std::size_t>();
  e.radius = j.at("radius").get<double>();
  e.safety_factor = j.value("safety_factor", 1.2);
  e.quantile_level = j.value("quantile_level", 0.99);
  e.quantile_ratio = j.value("quantile_ratio", 0.0);
  return e;
}

}  // namespace certiguard::perception
