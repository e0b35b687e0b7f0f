#pragma once

// Run configuration: one JSON document layered over built-in defaults, with
// dotted `key=value` overrides and whole-document validation.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "certiguard/conformal.hpp"
#include "certiguard/perception.hpp"
#include "certiguard/pipeline.hpp"
#include "certiguard/runtime.hpp"
#include "certiguard/world.hpp"

namespace certiguard::config {

/// Carries every violated constraint, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// The full schema with default values. Every accepted key appears here.
nlohmann::json default_config();

/// Applies `dotted.key=value`. The value is parsed as JSON when possible
/// and kept as a string otherwise. Throws ConfigError for unknown keys.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults, then the file at `path` (if any) merged over them, then the
/// overrides in order.
nlohmann::json load_document(const std::optional<std::string>& path,
                             const std::vector<std::string>& overrides = {});

struct MatcherSettings {
  perception::ScanMatcherOptions options;
  std::vector<double> temperatures;
  /// Training pairs scored when choosing the temperature.
  std::size_t training_subset = 500;
};

/// Where states are drawn from: a box (defaults to the workspace) and a
/// heading (uniform when unset).
struct StateRegion {
  std::optional<conformal::Box> box;
  std::optional<double> heading;
};

struct RunConfig {
  nlohmann::json document;  // the merged source, kept for snapshots

  std::optional<std::string> environment_path;
  double hallway_width = 1.5;
  double leg_length = 3.0;

  world::NoiseModel noise;

  std::size_t data_count = 5000;
  StateRegion data_region;

  std::string model = "matcher";
  double kernel_bandwidth = 2.5;
  perception::MlpOptions mlp;
  MatcherSettings matcher;

  std::size_t lipschitz_pairs = 2000;
  double lipschitz_radius = 0.05;
  double lipschitz_safety_factor = 1.2;
  double lipschitz_quantile = 0.99;
  pipeline::CompositeNoise lipschitz_noise = pipeline::CompositeNoise::None;
  StateRegion lipschitz_region;

  double alpha = 0.25;
  double epsilon = 0.04;
  std::size_t samples_per_point = 100;
  pipeline::LipschitzSource lipschitz_source = pipeline::LipschitzSource::Quantile;
  StateRegion calibration_region;
  std::size_t validation_samples = 10000;

  runtime::RolloutConfig rollout;
  std::size_t n_traces = 100;
  std::uint64_t seed = 0;
  bool exclude_infeasible = false;
  double histogram_bin_width = 0.02;

  std::optional<std::string> dataset_path;
  std::optional<std::string> model_path;
  std::optional<std::string> lipschitz_path;
  std::optional<std::string> calibration_path;

  world::Environment environment() const;
  /// The state box for a region: its own box, else the workspace.
  conformal::Box region_box(const StateRegion& r, const world::Environment& env) const {
    return r.box ? *r.box : env.workspace;
  }
};

/// Typed view of a merged document. Throws ConfigError listing every
/// violation, including referenced files that do not exist.
RunConfig parse(const nlohmann::json& doc);

/// Cross-field check that needs the calibrated bound: delta > eps' for the
/// continuous modes.
void check_against_calibration(const RunConfig& cfg, double eps_prime);

}  // namespace certiguard::config
