#include "certiguard/pipeline.hpp"

#include <cmath>
#include <stdexcept>

#include "certiguard/parallel.hpp"

namespace certiguard::pipeline {

perception::PairedMap composite_map(const perception::PerceptionMap& map,
                                    const world::Environment& env,
                                    const world::NoiseModel& noise, CompositeNoise mode,
                                    std::optional<double> heading) {
  return [&map, &env, noise, mode, heading](const Eigen::VectorXd& x, std::uint64_t pair_seed) {
    Rng rng(pair_seed);
    const double h = heading ? *heading : rng.uniform(-M_PI, M_PI);
    const auto state = world::VehicleState::at(x.head<2>(), h);
    const world::Scan scan = mode == CompositeNoise::Fixed ? world::sense(state, env, noise, rng)
                                                           : world::ray_cast(state, env);
    return map.estimate_position(scan);
  };
}

double lipschitz_product(const perception::LipschitzEstimate& e, LipschitzSource source) {
  return source == LipschitzSource::Max ? e.value : e.quantile_ratio * e.safety_factor;
}

conformal::CalibrationScores calibration_scores(const perception::PerceptionMap& map,
                                                const world::Environment& env,
                                                const world::NoiseModel& noise,
                                                const CalibrationSetup& setup) {
  const auto net = conformal::build_eps_net(setup.region, setup.epsilon);
  const auto heading = setup.heading;
  return conformal::calibrate_scores(
      net,
      [&](const Eigen::VectorXd& x, Rng& rng) {
        const double h = heading ? *heading : rng.uniform(-M_PI, M_PI);
        return world::sense(world::VehicleState::at(x.head<2>(), h), env, noise, rng);
      },
      [&](const world::Scan& scan) { return Eigen::VectorXd(map.estimate_position(scan)); },
      setup.samples_per_point, setup.seed, setup.jobs);
}

double binomial_sigma(double p, std::size_t n) {
  if (n == 0) throw std::invalid_argument("binomial_sigma: n must be >= 1");
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

Validation validate_bound(const perception::PerceptionMap& map, const world::Environment& env,
                          const world::NoiseModel& noise, const perception::StateSampler& sampler,
                          std::size_t count, const conformal::Bound& bound, double target,
                          std::uint64_t seed, std::size_t jobs) {
  if (count == 0) throw std::invalid_argument("validate_bound: count must be >= 1");
  const auto data = perception::generate_dataset(env, noise, sampler, count, seed, jobs);
  Validation v;
  v.samples = count;
  v.target = target;
  v.errors.resize(count);
  parallel_for(count, jobs, [&](std::size_t i) {
    const auto& s = data.pairs[i];
    v.errors[i] = (map.estimate_position(s.scan) - s.state.position()).norm();
  });
  for (double e : v.errors) v.covered += bound.covers(e) ? 1 : 0;
  v.rate = static_cast<double>(v.covered) / static_cast<double>(count);
  v.sigma = binomial_sigma(target, count);
  return v;
}

}  // namespace certiguard::pipeline
