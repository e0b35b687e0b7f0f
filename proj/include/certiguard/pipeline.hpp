#pragma once

// Glue between the modules: the composite sensing-plus-estimation map,
// per-point calibration of a perception map over an eps-net, and fresh-state
// validation of a calibrated bound.

#include <cstdint>
#include <optional>

#include "certiguard/conformal.hpp"
#include "certiguard/perception.hpp"
#include "certiguard/world.hpp"

namespace certiguard::pipeline {

/// How the sensor noise is treated when sampling the composite map for a
/// Lipschitz estimate: absent, or drawn once per pair and shared by both
/// points of the pair.
enum class CompositeNoise { None, Fixed };

/// x -> position part of q(p(x, delta)). The pair seed fixes the heading
/// (uniform unless `heading` is set) and, under Fixed, the noise draw.
perception::PairedMap composite_map(const perception::PerceptionMap& map,
                                    const world::Environment& env,
                                    const world::NoiseModel& noise, CompositeNoise mode,
                                    std::optional<double> heading = std::nullopt);

/// Which summary of a LipschitzEstimate feeds the combined bound: the
/// conservative value (max ratio times safety factor) or the quantile
/// ratio times the same factor.
enum class LipschitzSource { Max, Quantile };

double lipschitz_product(const perception::LipschitzEstimate& e, LipschitzSource source);

struct CalibrationSetup {
  conformal::Box region;
  std::optional<double> heading;  // uniform nuisance when unset
  double epsilon = 0.05;
  std::size_t samples_per_point = 100;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Per-point scores of `map` on the eps-net of setup.region. Measurements
/// at point x_j are sense(x_j, heading) with the heading drawn per sample.
conformal::CalibrationScores calibration_scores(const perception::PerceptionMap& map,
                                                const world::Environment& env,
                                                const world::NoiseModel& noise,
                                                const CalibrationSetup& setup);

struct Validation {
  std::size_t samples = 0;
  std::size_t covered = 0;
  double rate = 0.0;
  /// Normal-approximation binomial standard deviation at the target rate.
  double sigma = 0.0;
  double target = 0.0;
  std::vector<double> errors;
};

/// Fresh states from `sampler`; fraction whose estimation error is within
/// `bound`. `target` is the nominal coverage 1 - alpha used for sigma.
Validation validate_bound(const perception::PerceptionMap& map, const world::Environment& env,
                          const world::NoiseModel& noise, const perception::StateSampler& sampler,
                          std::size_t count, const conformal::Bound& bound, double target,
                          std::uint64_t seed, std::size_t jobs = 1);

/// sqrt(p (1 - p) / n).
double binomial_sigma(double p, std::size_t n);

}  // namespace certiguard::pipeline
